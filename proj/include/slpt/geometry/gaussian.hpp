#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <vector>

#include <Eigen/Core>

#include "slpt/diffcore/ops.hpp"
#include "slpt/geometry/camera.hpp"

namespace slpt::geometry {

template <class T>
using Vec2 = Eigen::Matrix<T, 2, 1>;
template <class T>
using Vec3 = Eigen::Matrix<T, 3, 1>;
template <class T>
using Vec4 = Eigen::Matrix<T, 4, 1>;
template <class T>
using Mat2 = Eigen::Matrix<T, 2, 2>;
template <class T>
using Mat3 = Eigen::Matrix<T, 3, 3>;

// Splatting constants shared by projection culling and both rasterizers.
inline constexpr double kLowPass = 0.3;           // px², added to the screen covariance diagonal
inline constexpr double kAlphaMin = 1.0 / 255.0;  // contributions below this are skipped
inline constexpr double kAlphaMax = 0.99;         // α clamp
inline constexpr double kTransmittanceMin = 1e-4; // compositing stops before T drops below this

template <class T>
struct Gaussian3D {
    Vec3<T> mean = Vec3<T>::Zero();
    Vec4<T> rotation{T(1), T(0), T(0), T(0)}; // (w, x, y, z)
    Vec3<T> scale = Vec3<T>::Constant(T(0.01));
    T opacity = T(0.5);
    Vec3<T> color = Vec3<T>::Zero();
    std::vector<T> feature;
};

template <class T>
struct Gaussian2D {
    Vec2<T> mean = Vec2<T>::Zero();
    Vec3<T> cov = Vec3<T>::Zero();   // (xx, xy, yy), low-pass included
    Vec3<T> conic = Vec3<T>::Zero(); // inverse covariance (xx, xy, yy)
    T depth = T(0);
    T radius = T(0); // support radius in pixels, see support_radius()
};

// Rotation matrix of a (w, x, y, z) quaternion. The polynomial form is used
// as-is, so it is exact for unit input and differentiable for any input.
template <class T>
Mat3<T> quat_to_rotation(const Vec4<T>& q)
{
    const T w = q[0], x = q[1], y = q[2], z = q[3];
    Mat3<T> r;
    r << T(1) - T(2) * (y * y + z * z), T(2) * (x * y - w * z), T(2) * (x * z + w * y),
        T(2) * (x * y + w * z), T(1) - T(2) * (x * x + z * z), T(2) * (y * z - w * x),
        T(2) * (x * z - w * y), T(2) * (y * z + w * x), T(1) - T(2) * (x * x + y * y);
    return r;
}

// Adjoint of quat_to_rotation: dL/dq from dL/dR.
template <class T>
Vec4<T> quat_to_rotation_vjp(const Vec4<T>& q, const Mat3<T>& g)
{
    const T w = q[0], x = q[1], y = q[2], z = q[3];
    Vec4<T> d;
    d[0] = T(2) * (-z * g(0, 1) + y * g(0, 2) + z * g(1, 0) - x * g(1, 2) - y * g(2, 0) + x * g(2, 1));
    d[1] = T(2) * (y * g(0, 1) + z * g(0, 2) + y * g(1, 0) - T(2) * x * g(1, 1) - w * g(1, 2) + z * g(2, 0) +
                   w * g(2, 1) - T(2) * x * g(2, 2));
    d[2] = T(2) * (-T(2) * y * g(0, 0) + x * g(0, 1) + w * g(0, 2) + x * g(1, 0) + z * g(1, 2) - w * g(2, 0) +
                   z * g(2, 1) - T(2) * y * g(2, 2));
    d[3] = T(2) * (-T(2) * z * g(0, 0) - w * g(0, 1) + x * g(0, 2) + w * g(1, 0) - T(2) * z * g(1, 1) +
                   y * g(1, 2) + x * g(2, 0) + y * g(2, 1));
    return d;
}

// Σ = R S Sᵀ Rᵀ, symmetrized exactly.
template <class T>
Mat3<T> build_covariance(const Vec4<T>& q, const Vec3<T>& s)
{
    require(q.squaredNorm() > T(0), "build_covariance: zero quaternion");
    require((s.array() > T(0)).all(), "build_covariance: scales must be positive");
    const Mat3<T> m = quat_to_rotation(q) * s.asDiagonal();
    Mat3<T> sigma = m * m.transpose();
    const Mat3<T> sym = T(0.5) * (sigma + sigma.transpose());
    return sym;
}

template <class T>
T max_eigenvalue(const Vec3<T>& cov)
{
    const T mid = T(0.5) * (cov[0] + cov[2]);
    const T half = T(0.5) * (cov[0] - cov[2]);
    return mid + std::sqrt(std::max(T(0), half * half + cov[1] * cov[1]));
}

// Radius beyond which o·exp(−½ xᵀΣ⁻¹x) < 1/255 for every direction; zero when
// the splat can never reach the skip threshold.
template <class T>
T support_radius(const Vec3<T>& cov, T opacity)
{
    const double level = 2.0 * std::log(static_cast<double>(opacity) / kAlphaMin);
    if (!(level > 0)) return T(0);
    const double r = std::sqrt(level * static_cast<double>(max_eigenvalue(cov)));
    return static_cast<T>(r * (1.0 + 1e-6) + 1e-6);
}

// Inclusive pixel range touched by a splat of the given support radius.
struct PixelRect {
    int x0 = 0, x1 = -1, y0 = 0, y1 = -1;
    bool empty() const { return x1 < x0 || y1 < y0; }
};

template <class T>
PixelRect footprint(const Vec2<T>& mean, T radius, int width, int height)
{
    PixelRect r;
    if (!(radius > T(0))) return r;
    const double mx = static_cast<double>(mean[0]);
    const double my = static_cast<double>(mean[1]);
    const double rad = static_cast<double>(radius);
    r.x0 = std::max(0, static_cast<int>(std::ceil(std::clamp(mx - rad, -1e9, 1e9))));
    r.x1 = std::min(width - 1, static_cast<int>(std::floor(std::clamp(mx + rad, -1e9, 1e9))));
    r.y0 = std::max(0, static_cast<int>(std::ceil(std::clamp(my - rad, -1e9, 1e9))));
    r.y1 = std::min(height - 1, static_cast<int>(std::floor(std::clamp(my + rad, -1e9, 1e9))));
    return r;
}

// Intermediate quantities of one projection, kept for the adjoint.
template <class T>
struct ProjectionState {
    Vec3<T> cam_point;
    Mat3<T> world_rot;  // camera rotation W_rot
    Mat3<T> gauss_rot;  // R_g
    Mat3<T> cov_cam;    // W_rot Σ W_rotᵀ
    Eigen::Matrix<T, 2, 3> jacobian;
};

template <class T>
Gaussian2D<T> project_core(const Vec3<T>& mean, const Vec4<T>& q, const Vec3<T>& s, const CameraModel& cam,
                           ProjectionState<T>* state = nullptr)
{
    const Mat3<T> w = cam.rotation().cast<T>();
    const Vec3<T> c = w * mean + cam.translation().cast<T>();
    const T z = c[2];
    const T fx = static_cast<T>(cam.fx), fy = static_cast<T>(cam.fy);
    Eigen::Matrix<T, 2, 3> j;
    j << fx / z, T(0), -fx * c[0] / (z * z), T(0), fy / z, -fy * c[1] / (z * z);
    const Mat3<T> rg = quat_to_rotation(q);
    const Mat3<T> m = rg * s.asDiagonal();
    const Mat3<T> sigma = m * m.transpose();
    const Mat3<T> cov_cam = w * sigma * w.transpose();
    const Mat2<T> cov2 = j * cov_cam * j.transpose();

    Gaussian2D<T> out;
    out.mean = Vec2<T>(fx * c[0] / z + static_cast<T>(cam.cx), fy * c[1] / z + static_cast<T>(cam.cy));
    out.cov = Vec3<T>(cov2(0, 0) + T(kLowPass), T(0.5) * (cov2(0, 1) + cov2(1, 0)), cov2(1, 1) + T(kLowPass));
    const T det = out.cov[0] * out.cov[2] - out.cov[1] * out.cov[1];
    if (det > T(0)) out.conic = Vec3<T>(out.cov[2] / det, -out.cov[1] / det, out.cov[0] / det);
    out.depth = z;
    if (state) *state = ProjectionState<T>{c, w, rg, cov_cam, j};
    return out;
}

// Local affine (EWA) projection of a 3D Gaussian. Returns nullopt when the
// splat is culled: in front of the near plane, or its support misses the image.
template <class T>
std::optional<Gaussian2D<T>> project_gaussian(const Gaussian3D<T>& g, const CameraModel& cam)
{
    const Vec3<T> c = cam.to_camera(g.mean);
    if (c[2] < static_cast<T>(cam.z_near)) return std::nullopt;
    Gaussian2D<T> out = project_core(g.mean, g.rotation, g.scale, cam);
    out.radius = support_radius(out.cov, g.opacity);
    if (footprint(out.mean, out.radius, cam.width, cam.height).empty()) return std::nullopt;
    return out;
}

// Adjoint of project_core. `d_cov` is the gradient w.r.t. the three stored
// entries (xx, xy, yy) of the screen covariance.
template <class T>
void project_vjp(const Vec4<T>& q, const Vec3<T>& s, const CameraModel& cam, const ProjectionState<T>& st,
                 const Vec2<T>& d_mean2, const Vec3<T>& d_cov, T d_depth, Vec3<T>& d_mean, Vec4<T>& d_q, Vec3<T>& d_s)
{
    const T fx = static_cast<T>(cam.fx), fy = static_cast<T>(cam.fy);
    const T x = st.cam_point[0], y = st.cam_point[1], z = st.cam_point[2];
    Mat2<T> g;
    g << d_cov[0], T(0.5) * d_cov[1], T(0.5) * d_cov[1], d_cov[2];

    const Eigen::Matrix<T, 2, 3> d_j = T(2) * g * st.jacobian * st.cov_cam;
    const Mat3<T> d_cov_cam = st.jacobian.transpose() * g * st.jacobian;
    const Mat3<T> d_sigma = st.world_rot.transpose() * d_cov_cam * st.world_rot;
    const Mat3<T> m = st.gauss_rot * s.asDiagonal();
    const Mat3<T> d_m = T(2) * d_sigma * m;
    for (int k = 0; k < 3; ++k) d_s[k] = st.gauss_rot.col(k).dot(d_m.col(k));
    const Mat3<T> d_rg = d_m * s.asDiagonal();
    d_q = quat_to_rotation_vjp(q, d_rg);

    const T z2 = z * z, z3 = z2 * z;
    Vec3<T> d_c;
    d_c[0] = d_mean2[0] * fx / z + d_j(0, 2) * (-fx / z2);
    d_c[1] = d_mean2[1] * fy / z + d_j(1, 2) * (-fy / z2);
    d_c[2] = -d_mean2[0] * fx * x / z2 - d_mean2[1] * fy * y / z2 + d_j(0, 0) * (-fx / z2) +
             d_j(0, 2) * (T(2) * fx * x / z3) + d_j(1, 1) * (-fy / z2) + d_j(1, 2) * (T(2) * fy * y / z3) + d_depth;
    d_mean = st.world_rot.transpose() * d_c;
}

// Batched projection as a graph op. Inputs: means {n,3}, quaternions {n,4},
// scales {n,3}; opacities are only used for culling. Outputs: screen means
// {n,2}, screen covariances {n,3} (xx, xy, yy), depths {n,1}. Culled splats
// produce zero rows and receive zero gradient.
template <class T>
struct ProjectedSplats {
    Var mean2d;
    Var cov2d;
    Var depth;
    std::vector<unsigned char> visible;
    std::vector<T> radius;
};

template <class T>
ProjectedSplats<T> project_gaussians(Graph<T>& g, Var means, Var quats, Var scales, const Tensor<T>& opacity,
                                     const CameraModel& cam)
{
    const auto& vm = g.value(means);
    const auto& vq = g.value(quats);
    const auto& vs = g.value(scales);
    const std::size_t n = vm.rows();
    require(vm.cols() == 3 && vq.cols() == 4 && vs.cols() == 3 && vq.rows() == n && vs.rows() == n &&
                opacity.size() == n,
            "project_gaussians: expected means {n,3}, quats {n,4}, scales {n,3}, opacity n");
    Tensor<T> mean2d = Tensor<T>::matrix(n, 2), cov2d = Tensor<T>::matrix(n, 3), depth = Tensor<T>::matrix(n, 1);
    std::vector<unsigned char> visible(n, 0);
    std::vector<T> radius(n, T(0));
    std::vector<ProjectionState<T>> states(n);
    for (std::size_t i = 0; i < n; ++i) {
        const Vec3<T> u(vm(i, 0), vm(i, 1), vm(i, 2));
        const Vec3<T> c = cam.to_camera(u);
        if (c[2] < static_cast<T>(cam.z_near)) continue;
        const Vec4<T> q(vq(i, 0), vq(i, 1), vq(i, 2), vq(i, 3));
        const Vec3<T> s(vs(i, 0), vs(i, 1), vs(i, 2));
        Gaussian2D<T> p = project_core(u, q, s, cam, &states[i]);
        const T r = support_radius(p.cov, opacity[i]);
        if (footprint(p.mean, r, cam.width, cam.height).empty()) continue;
        visible[i] = 1;
        radius[i] = r;
        mean2d(i, 0) = p.mean[0];
        mean2d(i, 1) = p.mean[1];
        for (int k = 0; k < 3; ++k) cov2d(i, static_cast<std::size_t>(k)) = p.cov[k];
        depth(i, 0) = p.depth;
    }
    std::vector<Tensor<T>> outs;
    outs.push_back(std::move(mean2d));
    outs.push_back(std::move(cov2d));
    outs.push_back(std::move(depth));
    auto vars = g.record(
        "project_gaussians", {means, quats, scales}, std::move(outs),
        [means, quats, scales, cam, visible, states = std::move(states)](Graph<T>& g, const auto& dy) {
            const bool need_m = g.requires_grad(means), need_q = g.requires_grad(quats), need_s = g.requires_grad(scales);
            const auto& vq = g.value(quats);
            const auto& vs = g.value(scales);
            for (std::size_t i = 0; i < visible.size(); ++i) {
                if (!visible[i]) continue;
                Vec2<T> dm2 = Vec2<T>::Zero();
                Vec3<T> dc = Vec3<T>::Zero();
                T dd = 0;
                if (dy[0]) dm2 = Vec2<T>((*dy[0])(i, 0), (*dy[0])(i, 1));
                if (dy[1]) dc = Vec3<T>((*dy[1])(i, 0), (*dy[1])(i, 1), (*dy[1])(i, 2));
                if (dy[2]) dd = (*dy[2])(i, 0);
                const Vec4<T> q(vq(i, 0), vq(i, 1), vq(i, 2), vq(i, 3));
                const Vec3<T> s(vs(i, 0), vs(i, 1), vs(i, 2));
                Vec3<T> d_mean, d_s;
                Vec4<T> d_q;
                project_vjp(q, s, cam, states[i], dm2, dc, dd, d_mean, d_q, d_s);
                if (need_m)
                    for (int k = 0; k < 3; ++k) g.grad(means)(i, static_cast<std::size_t>(k)) += d_mean[k];
                if (need_q)
                    for (int k = 0; k < 4; ++k) g.grad(quats)(i, static_cast<std::size_t>(k)) += d_q[k];
                if (need_s)
                    for (int k = 0; k < 3; ++k) g.grad(scales)(i, static_cast<std::size_t>(k)) += d_s[k];
            }
        });
    return ProjectedSplats<T>{vars[0], vars[1], vars[2], std::move(visible), std::move(radius)};
}

} // namespace slpt::geometry
