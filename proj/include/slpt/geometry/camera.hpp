#pragma once

#include <array>
#include <cmath>

#include <Eigen/Core>
#include <Eigen/Geometry>

#include "slpt/diffcore/errors.hpp"

namespace slpt::geometry {

// Pinhole camera, OpenCV convention (x right, y down, z forward). Pixel (u, v)
// is sampled at the integer coordinates (column, row).
struct CameraModel {
    double fx = 1.0;
    double fy = 1.0;
    double cx = 0.0;
    double cy = 0.0;
    int width = 1;
    int height = 1;
    Eigen::Matrix4d world_to_camera = Eigen::Matrix4d::Identity();
    double z_near = 0.05;

    Eigen::Matrix3d rotation() const { return world_to_camera.topLeftCorner<3, 3>(); }
    Eigen::Vector3d translation() const { return world_to_camera.topRightCorner<3, 1>(); }
    Eigen::Vector3d center() const { return -rotation().transpose() * translation(); }

    template <class T>
    Eigen::Matrix<T, 3, 1> to_camera(const Eigen::Matrix<T, 3, 1>& p) const
    {
        return rotation().cast<T>() * p + translation().cast<T>();
    }

    void validate() const
    {
        require(fx > 0 && fy > 0, "camera focal lengths must be positive");
        require(width > 0 && height > 0, "camera image size must be positive");
        require(z_near > 0, "camera z_near must be positive");
        const Eigen::Matrix3d r = rotation();
        require((r.transpose() * r - Eigen::Matrix3d::Identity()).norm() < 1e-6,
                "camera rotation block is not orthonormal");
        const Eigen::RowVector4d last(0, 0, 0, 1);
        require((world_to_camera.row(3) - last).norm() < 1e-12, "camera pose must be a rigid 4x4 transform");
    }

    std::array<double, 16> w2c_row_major() const
    {
        std::array<double, 16> out{};
        for (int r = 0; r < 4; ++r)
            for (int c = 0; c < 4; ++c) out[static_cast<std::size_t>(r * 4 + c)] = world_to_camera(r, c);
        return out;
    }

    static CameraModel look_at(const Eigen::Vector3d& eye, const Eigen::Vector3d& target, const Eigen::Vector3d& up,
                               double fx, double fy, int width, int height, double z_near = 0.05)
    {
        const Eigen::Vector3d forward = (target - eye).normalized();
        const Eigen::Vector3d right = forward.cross(up).normalized();
        const Eigen::Vector3d down = forward.cross(right);
        CameraModel cam;
        cam.fx = fx;
        cam.fy = fy;
        cam.cx = 0.5 * (width - 1);
        cam.cy = 0.5 * (height - 1);
        cam.width = width;
        cam.height = height;
        cam.z_near = z_near;
        Eigen::Matrix3d r;
        r.row(0) = right.transpose();
        r.row(1) = down.transpose();
        r.row(2) = forward.transpose();
        cam.world_to_camera.setIdentity();
        cam.world_to_camera.topLeftCorner<3, 3>() = r;
        cam.world_to_camera.topRightCorner<3, 1>() = -r * eye;
        return cam;
    }
};

} // namespace slpt::geometry
