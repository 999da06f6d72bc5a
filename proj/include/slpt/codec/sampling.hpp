#pragma once

#include <algorithm>
#include <array>
#include <limits>
#include <vector>

#include "slpt/diffcore/tensor.hpp"

namespace slpt::codec {

template <class T>
double squared_distance(const Tensor<T>& a, std::size_t i, const Tensor<T>& b, std::size_t j)
{
    double s = 0;
    for (std::size_t c = 0; c < 3; ++c) {
        const double d = static_cast<double>(a(i, c)) - static_cast<double>(b(j, c));
        s += d * d;
    }
    return s;
}

// Index of the point with the lexicographically smallest (x, y, z); the
// canonical farthest-point-sampling start, independent of input order.
template <class T>
std::size_t lexicographic_min(const Tensor<T>& coords)
{
    std::size_t best = 0;
    for (std::size_t i = 1; i < coords.rows(); ++i) {
        const std::array<T, 3> a{coords(i, 0), coords(i, 1), coords(i, 2)};
        const std::array<T, 3> b{coords(best, 0), coords(best, 1), coords(best, 2)};
        if (a < b) best = i;
    }
    return best;
}

// Greedy farthest point sampling of `count` indices; ties go to the smaller index.
template <class T>
std::vector<int> farthest_point_sample(const Tensor<T>& coords, std::size_t count)
{
    const std::size_t n = coords.rows();
    require(count >= 1 && count <= n, "farthest_point_sample: count must be in [1, N]");
    std::vector<int> out;
    out.reserve(count);
    std::vector<double> dist(n, std::numeric_limits<double>::infinity());
    std::size_t current = lexicographic_min(coords);
    for (std::size_t s = 0; s < count; ++s) {
        out.push_back(static_cast<int>(current));
        std::size_t next = 0;
        double best = -1;
        for (std::size_t i = 0; i < n; ++i) {
            dist[i] = std::min(dist[i], squared_distance(coords, i, coords, current));
            if (dist[i] > best) {
                best = dist[i];
                next = i;
            }
        }
        current = next;
    }
    return out;
}

// k nearest candidates of each query, ordered by (distance, index). Returns a
// flat {queries * k} index list; k is capped at the candidate count.
template <class T>
std::vector<int> knn(const Tensor<T>& queries, const Tensor<T>& candidates, std::size_t k)
{
    const std::size_t nq = queries.rows(), nc = candidates.rows();
    k = std::min(k, nc);
    std::vector<int> out(nq * k);
    std::vector<std::pair<double, int>> buf(nc);
    for (std::size_t q = 0; q < nq; ++q) {
        for (std::size_t c = 0; c < nc; ++c) buf[c] = {squared_distance(queries, q, candidates, c), static_cast<int>(c)};
        std::partial_sort(buf.begin(), buf.begin() + static_cast<std::ptrdiff_t>(k), buf.end());
        for (std::size_t j = 0; j < k; ++j) out[q * k + j] = buf[j].second;
    }
    return out;
}

} // namespace slpt::codec
