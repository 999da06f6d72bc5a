#pragma once

#include <cmath>
#include <vector>

#include "slpt/codec/point_cloud.hpp"
#include "slpt/geometry/camera.hpp"

namespace slpt::geometry {

// Back-projects every pixel with a positive, finite depth (camera-space z) to
// a world-space point colored by the image. `depth` is {H*W, 1} and `rgb`
// {H*W, 3}, both row-major over pixels. May return an empty cloud.
template <class T>
PointCloud<T> unproject(const Tensor<T>& depth, const Tensor<T>& rgb, const CameraModel& cam)
{
    const std::size_t pixels = static_cast<std::size_t>(cam.width) * static_cast<std::size_t>(cam.height);
    require(depth.size() == pixels, "unproject: depth map size does not match camera");
    require(rgb.size() == pixels * 3, "unproject: rgb image size does not match camera");
    const Eigen::Matrix3d rt = cam.rotation().transpose();
    const Eigen::Vector3d t = cam.translation();
    std::vector<T> coords, colors;
    for (int v = 0; v < cam.height; ++v) {
        for (int u = 0; u < cam.width; ++u) {
            const std::size_t p = static_cast<std::size_t>(v) * static_cast<std::size_t>(cam.width) + static_cast<std::size_t>(u);
            const double d = static_cast<double>(depth[p]);
            if (!(d > 0) || !std::isfinite(d)) continue;
            const Eigen::Vector3d xc((u - cam.cx) / cam.fx * d, (v - cam.cy) / cam.fy * d, d);
            const Eigen::Vector3d xw = rt * (xc - t);
            for (int k = 0; k < 3; ++k) {
                coords.push_back(static_cast<T>(xw[k]));
                colors.push_back(rgb[p * 3 + static_cast<std::size_t>(k)]);
            }
        }
    }
    const std::size_t n = coords.size() / 3;
    PointCloud<T> out;
    out.coords = Tensor<T>({n, 3}, std::move(coords));
    out.colors = Tensor<T>({n, 3}, std::move(colors));
    return out;
}

} // namespace slpt::geometry
