#include "millopt/grid.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "millopt/errors.hpp"

namespace millopt {

StructuredGrid::StructuredGrid(std::span<const int> extents) {
    if (extents.size() != 2 && extents.size() != 3) {
        throw ValidationError("grid extents must have 2 or 3 entries, got " +
                              std::to_string(extents.size()));
    }
    dim_ = static_cast<int>(extents.size());
    count_ = 1;
    for (std::size_t a = 0; a < extents.size(); ++a) {
        if (extents[a] < 1) {
            throw ValidationError("grid extent " + std::to_string(a) + " must be >= 1, got " +
                                  std::to_string(extents[a]));
        }
        ext_[a] = extents[a];
        count_ *= static_cast<std::size_t>(extents[a]);
    }
}

StructuredGrid::StructuredGrid(std::initializer_list<int> extents)
    : StructuredGrid(std::span<const int>(extents.begin(), extents.size())) {}

Index3 StructuredGrid::coords(std::size_t e) const {
    const auto nx = static_cast<std::size_t>(ext_[0]);
    const auto ny = static_cast<std::size_t>(ext_[1]);
    return {static_cast<int>(e % nx), static_cast<int>((e / nx) % ny),
            static_cast<int>(e / (nx * ny))};
}

bool StructuredGrid::contains(const Index3& c) const {
    for (int a = 0; a < 3; ++a) {
        if (c[a] < 0 || c[a] >= ext_[a]) return false;
    }
    return true;
}

Vec3 StructuredGrid::center(std::size_t e) const {
    const Index3 c = coords(e);
    Vec3 p{(c[0] + 0.5) * edge_length, (c[1] + 0.5) * edge_length, 0.0};
    if (dim_ == 3) p[2] = (c[2] + 0.5) * edge_length;
    return p;
}

Index3 StructuredGrid::node_extents() const {
    return {ext_[0] + 1, ext_[1] + 1, dim_ == 3 ? ext_[2] + 1 : 1};
}

std::size_t StructuredGrid::node_count() const {
    const Index3 n = node_extents();
    return static_cast<std::size_t>(n[0]) * n[1] * n[2];
}

std::size_t StructuredGrid::node_index(int i, int j, int k) const {
    const auto nx = static_cast<std::size_t>(ext_[0] + 1);
    const auto ny = static_cast<std::size_t>(ext_[1] + 1);
    return static_cast<std::size_t>(i) + nx * (static_cast<std::size_t>(j) + ny * k);
}

std::vector<std::size_t> StructuredGrid::element_nodes(std::size_t e) const {
    const Index3 c = coords(e);
    const int i = c[0], j = c[1], k = c[2];
    if (dim_ == 2) {
        return {node_index(i, j), node_index(i + 1, j), node_index(i + 1, j + 1),
                node_index(i, j + 1)};
    }
    return {node_index(i, j, k),         node_index(i + 1, j, k),
            node_index(i + 1, j + 1, k), node_index(i, j + 1, k),
            node_index(i, j, k + 1),     node_index(i + 1, j, k + 1),
            node_index(i + 1, j + 1, k + 1), node_index(i, j + 1, k + 1)};
}

std::vector<Neighbor> StructuredGrid::neighbors_within_radius(std::size_t element,
                                                              double radius) const {
    if (element >= count_) {
        throw ValidationError("element index " + std::to_string(element) + " out of range");
    }
    if (!(radius > 0.0)) throw ValidationError("neighbor radius must be positive");

    const Index3 c = coords(element);
    const int reach = static_cast<int>(std::ceil(radius / edge_length));
    const int reach_z = dim_ == 3 ? reach : 0;
    std::vector<Neighbor> out;
    for (int k = std::max(0, c[2] - reach_z); k <= std::min(ext_[2] - 1, c[2] + reach_z); ++k) {
        for (int j = std::max(0, c[1] - reach); j <= std::min(ext_[1] - 1, c[1] + reach); ++j) {
            for (int i = std::max(0, c[0] - reach); i <= std::min(ext_[0] - 1, c[0] + reach);
                 ++i) {
                const double dx = (i - c[0]) * edge_length;
                const double dy = (j - c[1]) * edge_length;
                const double dz = (k - c[2]) * edge_length;
                const double dist = std::sqrt(dx * dx + dy * dy + dz * dz);
                if (dist < radius) out.push_back({index(i, j, k), dist});
            }
        }
    }
    return out;
}

}  // namespace millopt
