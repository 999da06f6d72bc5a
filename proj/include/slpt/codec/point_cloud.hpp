#pragma once

#include "slpt/diffcore/tensor.hpp"

namespace slpt {

// N points with coordinates {N,3} (meters), colors {N,3} in [0,1] and an
// optional feature block {N,D}.
template <class T>
struct PointCloud {
    Tensor<T> coords;
    Tensor<T> colors;
    Tensor<T> features;

    std::size_t size() const { return coords.empty() ? 0 : coords.rows(); }

    void validate() const
    {
        if (coords.empty() && colors.empty()) return;
        require(coords.rank() == 2 && coords.cols() == 3, "point cloud coords must be {N,3}");
        require(colors.rank() == 2 && colors.cols() == 3 && colors.rows() == coords.rows(),
                "point cloud colors must be {N,3} matching coords");
        require(features.empty() || features.rows() == coords.rows(), "point features must have one row per point");
        if (!coords.all_finite()) throw InputError("point cloud has non-finite coordinates");
        for (T c : colors.vec())
            if (!(c >= T(0) && c <= T(1))) throw InputError("point colors must lie in [0,1]");
    }
};

} // namespace slpt
