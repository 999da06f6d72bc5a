#include <random>

#include <Eigen/Eigenvalues>
#include <gtest/gtest.h>

#include "slpt/diffcore/gradcheck.hpp"
#include "slpt/geometry/gaussian.hpp"
#include "slpt/geometry/unproject.hpp"

using namespace slpt;
using namespace slpt::geometry;
using Td = Tensor<double>;

namespace {

CameraModel axis_camera(double f = 100, int size = 64)
{
    CameraModel cam;
    cam.fx = cam.fy = f;
    cam.cx = cam.cy = 32;
    cam.width = cam.height = size;
    return cam;
}

Vec4<double> axis_angle_quat(const Eigen::Vector3d& axis, double angle)
{
    const Eigen::Vector3d a = axis.normalized() * std::sin(0.5 * angle);
    return {std::cos(0.5 * angle), a[0], a[1], a[2]};
}

// Screen covariance through a numerically differentiated projection map, as an
// independent check of the analytic Jacobian.
Eigen::Matrix2d numeric_screen_cov(const Vec3<double>& mean, const Eigen::Matrix3d& sigma, const CameraModel& cam)
{
    auto project = [&](const Eigen::Vector3d& p) {
        const Eigen::Vector3d c = cam.to_camera<double>(p);
        return Eigen::Vector2d(cam.fx * c[0] / c[2] + cam.cx, cam.fy * c[1] / c[2] + cam.cy);
    };
    Eigen::Matrix<double, 2, 3> j;
    const double h = 1e-6;
    for (int k = 0; k < 3; ++k) {
        Eigen::Vector3d e = Eigen::Vector3d::Zero();
        e[k] = h;
        j.col(k) = (project(mean + e) - project(mean - e)) / (2 * h);
    }
    return j * sigma * j.transpose();
}

} // namespace

TEST(BuildCovariance, IdentityRotationUnitScale)
{
    const Mat3<double> s = build_covariance<double>({1, 0, 0, 0}, {1, 1, 1});
    EXPECT_LT((s - Mat3<double>::Identity()).norm(), 1e-15);
}

TEST(BuildCovariance, AxisScale)
{
    const Mat3<double> s = build_covariance<double>({1, 0, 0, 0}, {2, 1, 1});
    EXPECT_LT((s - Eigen::Vector3d(4, 1, 1).asDiagonal().toDenseMatrix()).norm(), 1e-15);
}

TEST(BuildCovariance, QuarterTurnAboutZ)
{
    const Vec4<double> q = axis_angle_quat({0, 0, 1}, M_PI / 2);
    const Mat3<double> s = build_covariance<double>(q, {2, 1, 1});
    const Eigen::Matrix3d r = Eigen::AngleAxisd(M_PI / 2, Eigen::Vector3d::UnitZ()).toRotationMatrix();
    const Eigen::Matrix3d oracle = r * Eigen::Vector3d(4, 1, 1).asDiagonal() * r.transpose();
    EXPECT_LT((s - oracle).norm(), 1e-12);
    EXPECT_NEAR(s(0, 0), 1, 1e-12);
    EXPECT_NEAR(s(1, 1), 4, 1e-12);
}

TEST(BuildCovariance, ZeroQuaternionRejected)
{
    EXPECT_THROW(build_covariance<double>(Vec4<double>::Zero(), {1, 1, 1}), ContractViolation);
}

TEST(BuildCovariance, SymmetricWithSquaredScaleEigenvalues)
{
    std::mt19937_64 rng(11);
    std::normal_distribution<double> n(0, 1);
    std::uniform_real_distribution<double> u(1e-3, 0.5);
    for (int trial = 0; trial < 50; ++trial) {
        const Vec4<double> q = Vec4<double>(n(rng), n(rng), n(rng), n(rng)).normalized();
        const Vec3<double> s(u(rng), u(rng), u(rng));
        const Mat3<double> sigma = build_covariance(q, s);
        EXPECT_EQ(sigma, sigma.transpose());
        Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es(sigma);
        std::array<double, 3> want{s[0] * s[0], s[1] * s[1], s[2] * s[2]};
        std::sort(want.begin(), want.end());
        for (int k = 0; k < 3; ++k) EXPECT_NEAR(es.eigenvalues()[k], want[static_cast<std::size_t>(k)], 1e-8);
    }
}

TEST(Project, OpticalAxisPoint)
{
    const CameraModel cam = axis_camera();
    Gaussian3D<double> g;
    g.mean = {0, 0, 2};
    const auto p = project_gaussian(g, cam);
    ASSERT_TRUE(p.has_value());
    EXPECT_NEAR(p->mean[0], 32, 1e-12);
    EXPECT_NEAR(p->mean[1], 32, 1e-12);
    EXPECT_NEAR(p->depth, 2, 1e-12);
}

TEST(Project, IsotropicCovarianceMatchesNumericJacobian)
{
    const CameraModel cam = axis_camera();
    Gaussian3D<double> g;
    g.mean = {0, 0, 2};
    g.scale = {0.1, 0.1, 0.1};
    g.opacity = 0.9;
    const auto p = project_gaussian(g, cam);
    ASSERT_TRUE(p.has_value());
    EXPECT_NEAR(p->cov[0], 25 + kLowPass, 1e-9);
    EXPECT_NEAR(p->cov[2], 25 + kLowPass, 1e-9);
    EXPECT_NEAR(p->cov[1], 0, 1e-12);

    // Off-axis, anisotropic case against the numeric projection Jacobian.
    g.mean = {0.3, -0.2, 1.7};
    g.rotation = axis_angle_quat({1, 2, 3}, 0.7);
    g.scale = {0.05, 0.2, 0.01};
    const auto q = project_gaussian(g, cam);
    ASSERT_TRUE(q.has_value());
    const Eigen::Matrix2d oracle = numeric_screen_cov(g.mean, build_covariance(g.rotation, g.scale), cam);
    EXPECT_NEAR(q->cov[0], oracle(0, 0) + kLowPass, 1e-5);
    EXPECT_NEAR(q->cov[1], oracle(0, 1), 1e-5);
    EXPECT_NEAR(q->cov[2], oracle(1, 1) + kLowPass, 1e-5);
}

TEST(Project, NearPlaneCull)
{
    const CameraModel cam = axis_camera();
    Gaussian3D<double> g;
    g.mean = {0, 0, 0.01};
    EXPECT_FALSE(project_gaussian(g, cam).has_value());
}

TEST(Project, OffscreenCull)
{
    const CameraModel cam = axis_camera();
    Gaussian3D<double> g;
    g.mean = {5, 0, 1};
    g.scale = {0.001, 0.001, 0.001};
    EXPECT_FALSE(project_gaussian(g, cam).has_value());
}

TEST(Project, FrameConsistency)
{
    // Rotating the Gaussian by Q and the camera by Q⁻¹ leaves the screen covariance unchanged.
    std::mt19937_64 rng(5);
    std::normal_distribution<double> n(0, 1);
    const CameraModel cam = axis_camera();
    for (int trial = 0; trial < 20; ++trial) {
        Gaussian3D<double> g;
        g.mean = Eigen::Vector3d(0.1 * n(rng), 0.1 * n(rng), 0);
        g.rotation = Vec4<double>(n(rng), n(rng), n(rng), n(rng)).normalized();
        g.scale = {0.05, 0.1, 0.02};
        g.opacity = 0.8;
        CameraModel c0 = CameraModel::look_at({0.2, -1.5, 0.7}, {0, 0, 0}, {0, 0, 1}, 80, 80, 64, 64);
        const Eigen::Quaterniond rq(Eigen::AngleAxisd(0.3 + trial * 0.1, Eigen::Vector3d(n(rng), n(rng), n(rng)).normalized()));
        const Eigen::Quaterniond gq(g.rotation[0], g.rotation[1], g.rotation[2], g.rotation[3]);
        Gaussian3D<double> g1 = g;
        const Eigen::Quaterniond prod = rq * gq;
        g1.rotation = {prod.w(), prod.x(), prod.y(), prod.z()};
        g1.mean = rq * g.mean;
        CameraModel c1 = c0;
        Eigen::Matrix4d rot = Eigen::Matrix4d::Identity();
        rot.topLeftCorner<3, 3>() = rq.toRotationMatrix().transpose();
        c1.world_to_camera = c0.world_to_camera * rot;
        const auto p0 = project_gaussian(g, c0);
        const auto p1 = project_gaussian(g1, c1);
        ASSERT_TRUE(p0 && p1);
        EXPECT_LT((p0->cov - p1->cov).norm(), 1e-6);
        EXPECT_LT((p0->mean - p1->mean).norm(), 1e-6);
    }
    (void)cam;
}

TEST(Project, GradcheckMeansQuatsScales)
{
    const CameraModel cam = CameraModel::look_at({0.3, -1.4, 0.8}, {0, 0, 0}, {0, 0, 1}, 60, 60, 48, 40);
    std::mt19937_64 rng(21);
    std::normal_distribution<double> n(0, 1);
    std::uniform_real_distribution<double> u(0.02, 0.2);
    const std::size_t count = 6;
    const Td opacity = Td::matrix(count, 1, 0.7);
    for (int draw = 0; draw < 20; ++draw) {
        Td means = Td::matrix(count, 3), quats = Td::matrix(count, 4), scales = Td::matrix(count, 3);
        for (std::size_t i = 0; i < count; ++i) {
            for (std::size_t k = 0; k < 3; ++k) means(i, k) = 0.2 * n(rng);
            for (std::size_t k = 0; k < 4; ++k) quats(i, k) = n(rng);
            for (std::size_t k = 0; k < 3; ++k) scales(i, k) = u(rng);
        }
        auto fn = [&](Graph<double>& g, const std::vector<Var>& v) {
            auto p = project_gaussians(g, v[0], v[1], v[2], opacity, cam);
            Var all = ops::concat_cols(g, {p.mean2d, p.cov2d, p.depth});
            return random_projection(g, all, 77);
        };
        EXPECT_LT(gradcheck<double>(fn, {means, quats, scales}).worst(), 1e-4) << "draw " << draw;
    }
}

TEST(Unproject, PrincipalPixelLiesOnOpticalAxis)
{
    const CameraModel cam = CameraModel::look_at({1, 0.5, 0.3}, {0, 0, 0}, {0, 0, 1}, 50, 50, 5, 5);
    Td depth = Td::matrix(25, 1), rgb = Td::matrix(25, 3, 0.5);
    depth(12, 0) = 1.3; // pixel (2, 2) = (cx, cy)
    const auto pc = unproject(depth, rgb, cam);
    ASSERT_EQ(pc.size(), 1u);
    const Eigen::Vector3d axis = cam.rotation().row(2).transpose();
    const Eigen::Vector3d want = cam.center() + 1.3 * axis;
    for (int k = 0; k < 3; ++k) EXPECT_NEAR(pc.coords(0, static_cast<std::size_t>(k)), want[k], 1e-12);
}

TEST(Unproject, RoundTripAndHandRays)
{
    const CameraModel cam = CameraModel::look_at({0.4, -1.1, 0.9}, {0, 0.1, 0}, {0, 0, 1}, 40, 44, 2, 2);
    Td depth({4, 1}, std::vector<double>{1.0, 1.5, 0.0, 2.0});
    Td rgb = Td::matrix(4, 3, 0.25);
    const auto pc = unproject(depth, rgb, cam);
    ASSERT_EQ(pc.size(), 3u);
    const int pixels[3][2] = {{0, 0}, {1, 0}, {1, 1}};
    const double depths[3] = {1.0, 1.5, 2.0};
    for (std::size_t i = 0; i < 3; ++i) {
        const double u = pixels[i][0], v = pixels[i][1], d = depths[i];
        // Ray through the pixel, scaled so its camera z equals d.
        const Eigen::Vector3d ray_cam((u - cam.cx) / cam.fx, (v - cam.cy) / cam.fy, 1.0);
        const Eigen::Vector3d want = cam.center() + cam.rotation().transpose() * (d * ray_cam);
        for (int k = 0; k < 3; ++k) EXPECT_NEAR(pc.coords(i, static_cast<std::size_t>(k)), want[k], 1e-12);
        const Eigen::Vector3d c = cam.to_camera<double>(Eigen::Vector3d(pc.coords(i, 0), pc.coords(i, 1), pc.coords(i, 2)));
        EXPECT_NEAR(cam.fx * c[0] / c[2] + cam.cx, u, 1e-4);
        EXPECT_NEAR(cam.fy * c[1] / c[2] + cam.cy, v, 1e-4);
    }
}

TEST(Unproject, AllInvalidGivesEmptyCloud)
{
    const CameraModel cam = axis_camera(10, 4);
    Td depth = Td::matrix(16, 1), rgb = Td::matrix(16, 3);
    EXPECT_EQ(unproject(depth, rgb, cam).size(), 0u);
}

TEST(Camera, ValidateRejectsNonRigidPose)
{
    CameraModel cam = axis_camera();
    EXPECT_NO_THROW(cam.validate());
    cam.world_to_camera(0, 0) = 2;
    EXPECT_THROW(cam.validate(), ContractViolation);
}
