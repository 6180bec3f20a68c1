#pragma once

#include <array>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <vector>

namespace millopt {

/// Per-element scalar field, indexed like StructuredGrid elements.
using DensityField = std::vector<double>;

using Vec3 = std::array<double, 3>;
using Index3 = std::array<int, 3>;

struct Neighbor {
    std::size_t index;
    double distance;
};

/// Regular lattice of unit quads (2D) or unit hexes (3D).
///
/// Elements are numbered x-fastest, then y, then z. A 2D grid behaves like a
/// 3D grid with a single layer (nz = 1, z-center 0). Nodes are numbered the
/// same way over the (nx+1) x (ny+1) [x (nz+1)] node lattice.
class StructuredGrid {
public:
    /// Extents must have 2 or 3 entries, each >= 1.
    explicit StructuredGrid(std::span<const int> extents);
    StructuredGrid(std::initializer_list<int> extents);

    int dimension() const { return dim_; }
    int nx() const { return ext_[0]; }
    int ny() const { return ext_[1]; }
    int nz() const { return ext_[2]; }
    const Index3& extents() const { return ext_; }
    std::size_t element_count() const { return count_; }

    /// Element edge length; fixed at 1.
    static constexpr double edge_length = 1.0;

    std::size_t index(int i, int j, int k = 0) const {
        return static_cast<std::size_t>(i) +
               static_cast<std::size_t>(ext_[0]) *
                   (static_cast<std::size_t>(j) + static_cast<std::size_t>(ext_[1]) * k);
    }
    std::size_t index(const Index3& c) const { return index(c[0], c[1], c[2]); }
    Index3 coords(std::size_t e) const;
    bool contains(const Index3& c) const;

    /// Center of element e. In 2D the z component is 0.
    Vec3 center(std::size_t e) const;

    // Node lattice.
    Index3 node_extents() const;
    std::size_t node_count() const;
    std::size_t node_index(int i, int j, int k = 0) const;
    /// Nodes of element e in the standard counter-clockwise order
    /// (4 in 2D, 8 in 3D: bottom face z=k first, then z=k+1).
    std::vector<std::size_t> element_nodes(std::size_t e) const;

    /// Elements whose center lies strictly closer than `radius` to the center
    /// of `element`, including the element itself. Sorted by index.
    std::vector<Neighbor> neighbors_within_radius(std::size_t element, double radius) const;

private:
    int dim_;
    Index3 ext_{1, 1, 1};
    std::size_t count_;
};

}  // namespace millopt
