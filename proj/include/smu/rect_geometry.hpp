#pragma once

// Axis-aligned rectangle calculus on the positive orthant: signed vertices,
// g-volumes and the rectangular grid generated by a dataset.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <limits>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "smu/error.hpp"

namespace smu {

using Coords = std::vector<double>;

inline std::string format_coords(std::span<const double> x)
{
    std::ostringstream os;
    os.precision(17);
    os << '(';
    for (std::size_t i = 0; i < x.size(); ++i) {
        if (i) os << ", ";
        os << x[i];
    }
    os << ')';
    return os.str();
}

/// |x| = product of the coordinates.
inline double volume(std::span<const double> x)
{
    double v = 1.0;
    for (double c : x) v *= c;
    return v;
}

/// x <= y coordinatewise.
inline bool dominated_by(std::span<const double> x, std::span<const double> y)
{
    for (std::size_t i = 0; i < x.size(); ++i)
        if (x[i] > y[i]) return false;
    return true;
}

/// A point of (0, inf)^d.
class Point {
public:
    Point() = default;
    Point(std::initializer_list<double> c) : Point(Coords(c)) {}
    explicit Point(Coords c) : coords_(std::move(c))
    {
        if (coords_.empty()) throw Error("Point: dimension must be >= 1");
        for (double v : coords_)
            if (!std::isfinite(v) || !(v > 0.0))
                throw Error("Point: coordinates must be finite and > 0, got " + format_coords(coords_));
    }

    std::size_t dim() const { return coords_.size(); }
    double operator[](std::size_t i) const { return coords_[i]; }
    std::span<const double> coords() const { return coords_; }
    operator std::span<const double>() const { return coords_; }
    double volume() const { return smu::volume(coords_); }

    friend bool operator==(const Point&, const Point&) = default;
    friend auto operator<=>(const Point&, const Point&) = default;

private:
    Coords coords_;
};

/// n observations in (0, inf)^d stored row-major.
class Dataset {
public:
    Dataset() = default;
    explicit Dataset(std::size_t d) : d_(d)
    {
        if (d == 0) throw Error("Dataset: dimension must be >= 1");
    }
    Dataset(std::size_t d, std::vector<double> values) : Dataset(d)
    {
        if (values.size() % d != 0) throw Error("Dataset: value count is not a multiple of the dimension");
        for (std::size_t k = 0; k < values.size(); ++k)
            if (!std::isfinite(values[k]) || !(values[k] > 0.0))
                throw Error("Dataset: observation " + std::to_string(k / d) + " has a non-positive coordinate");
        values_ = std::move(values);
    }
    static Dataset from_points(std::span<const Point> pts)
    {
        if (pts.empty()) throw Error("Dataset: no points");
        Dataset out(pts.front().dim());
        for (const auto& p : pts) out.push_back(p.coords());
        return out;
    }

    void push_back(std::span<const double> x)
    {
        if (x.size() != d_) throw Error("Dataset: mixed dimensions");
        for (double v : x)
            if (!std::isfinite(v) || !(v > 0.0)) throw Error("Dataset: coordinates must be finite and > 0");
        values_.insert(values_.end(), x.begin(), x.end());
    }

    std::size_t size() const { return d_ ? values_.size() / d_ : 0; }
    std::size_t dim() const { return d_; }
    bool empty() const { return values_.empty(); }
    std::span<const double> row(std::size_t i) const { return {values_.data() + i * d_, d_}; }
    const std::vector<double>& values() const { return values_; }

private:
    std::size_t d_ = 0;
    std::vector<double> values_;
};

enum class Closure { closed, lower_closed_upper_open, lower_open_upper_closed, open };

/// Axis-aligned rectangle with corners in [0, inf)^d. The closure flavor only
/// matters for membership tests.
class Rect {
public:
    Rect(Coords lower, Coords upper, Closure closure = Closure::lower_closed_upper_open)
        : lower_(std::move(lower)), upper_(std::move(upper)), closure_(closure)
    {
        if (lower_.empty() || lower_.size() != upper_.size()) throw Error("Rect: corner dimensions differ");
        for (std::size_t i = 0; i < lower_.size(); ++i) {
            if (!std::isfinite(lower_[i]) || !std::isfinite(upper_[i]) || lower_[i] < 0.0)
                throw Error("Rect: corners must be finite and >= 0");
            if (lower_[i] > upper_[i]) throw Error("Rect: lower corner exceeds upper corner");
        }
    }

    std::size_t dim() const { return lower_.size(); }
    const Coords& lower() const { return lower_; }
    const Coords& upper() const { return upper_; }
    Closure closure() const { return closure_; }

    bool degenerate() const
    {
        for (std::size_t i = 0; i < dim(); ++i)
            if (lower_[i] == upper_[i]) return true;
        return false;
    }

    bool contains(std::span<const double> x) const
    {
        if (x.size() != dim()) throw Error("Rect::contains: dimension mismatch");
        const bool lo_closed = closure_ == Closure::closed || closure_ == Closure::lower_closed_upper_open;
        const bool up_closed = closure_ == Closure::closed || closure_ == Closure::lower_open_upper_closed;
        for (std::size_t i = 0; i < dim(); ++i) {
            if (lo_closed ? x[i] < lower_[i] : x[i] <= lower_[i]) return false;
            if (up_closed ? x[i] > upper_[i] : x[i] >= upper_[i]) return false;
        }
        return true;
    }

    friend bool operator==(const Rect&, const Rect&) = default;

private:
    Coords lower_;
    Coords upper_;
    Closure closure_;
};

struct SignedVertex {
    int sign;
    Coords vertex;
};

/// All 2^d vertices of r with their signum: -1 when an odd number of
/// coordinates sit on the lower corner, +1 otherwise. Vertex k takes the
/// upper coordinate in dimension i iff bit i of k is set.
inline std::vector<SignedVertex> vertex_signs(const Rect& r)
{
    const std::size_t d = r.dim();
    if (d >= 8 * sizeof(std::size_t) - 1) throw Error("vertex_signs: dimension too large");
    const std::size_t count = std::size_t{1} << d;
    std::vector<SignedVertex> out;
    out.reserve(count);
    for (std::size_t mask = 0; mask < count; ++mask) {
        Coords v(d);
        std::size_t lower_count = 0;
        for (std::size_t i = 0; i < d; ++i) {
            const bool up = (mask >> i) & 1U;
            v[i] = up ? r.upper()[i] : r.lower()[i];
            lower_count += up ? 0 : 1;
        }
        out.push_back({(lower_count % 2 == 1) ? -1 : +1, std::move(v)});
    }
    return out;
}

/// g-volume V_g[x, y): signed sum of g over the vertices of r.
/// Throws if g throws or returns a non-finite value at a vertex.
template <class G>
double g_volume(G&& g, const Rect& r)
{
    double acc = 0.0;
    for (const auto& sv : vertex_signs(r)) {
        double value;
        try {
            value = static_cast<double>(g(std::span<const double>(sv.vertex)));
        } catch (const std::exception& e) {
            throw Error("g_volume: evaluation failed at vertex " + format_coords(sv.vertex) + ": " + e.what());
        }
        if (!std::isfinite(value))
            throw Error("g_volume: non-finite value at vertex " + format_coords(sv.vertex));
        acc += sv.sign * value;
    }
    return acc;
}

/// The rectangular grid generated by a dataset: every point whose j-th
/// coordinate is some observation's j-th coordinate. Flat indices run
/// lexicographically with dimension 0 most significant.
class Grid {
public:
    Grid() = default;
    explicit Grid(std::vector<std::vector<double>> coords) : coords_(std::move(coords))
    {
        if (coords_.empty()) throw Error("Grid: dimension must be >= 1");
        size_ = 1;
        for (const auto& c : coords_) {
            if (c.empty()) throw Error("Grid: empty coordinate list");
            for (std::size_t k = 0; k < c.size(); ++k) {
                if (!std::isfinite(c[k]) || !(c[k] > 0.0)) throw Error("Grid: coordinates must be > 0");
                if (k && !(c[k - 1] < c[k])) throw Error("Grid: coordinates must be strictly increasing");
            }
            if (size_ > std::numeric_limits<std::uint64_t>::max() / c.size())
                throw Error("Grid: point count overflows 64 bits");
            size_ *= c.size();
        }
    }

    std::size_t dim() const { return coords_.size(); }
    /// N = prod_j n_j.
    std::uint64_t size() const { return size_; }
    std::size_t extent(std::size_t j) const { return coords_[j].size(); }
    const std::vector<double>& coords(std::size_t j) const { return coords_[j]; }
    const std::vector<std::vector<double>>& all_coords() const { return coords_; }

    /// Rank of value in dimension j (exact match), or npos.
    std::size_t rank(std::size_t j, double value) const
    {
        const auto& c = coords_[j];
        auto it = std::lower_bound(c.begin(), c.end(), value);
        if (it == c.end() || *it != value) return npos;
        return static_cast<std::size_t>(it - c.begin());
    }

    bool contains(std::span<const double> x) const
    {
        if (x.size() != dim()) return false;
        for (std::size_t j = 0; j < dim(); ++j)
            if (rank(j, x[j]) == npos) return false;
        return true;
    }

    std::uint64_t flat_index(std::span<const std::size_t> ranks) const
    {
        std::uint64_t idx = 0;
        for (std::size_t j = 0; j < dim(); ++j) idx = idx * coords_[j].size() + ranks[j];
        return idx;
    }

    std::vector<std::size_t> ranks_of(std::uint64_t flat) const
    {
        std::vector<std::size_t> r(dim());
        for (std::size_t j = dim(); j-- > 0;) {
            r[j] = static_cast<std::size_t>(flat % coords_[j].size());
            flat /= coords_[j].size();
        }
        return r;
    }

    Coords point_at(std::uint64_t flat) const
    {
        const auto r = ranks_of(flat);
        Coords x(dim());
        for (std::size_t j = 0; j < dim(); ++j) x[j] = coords_[j][r[j]];
        return x;
    }

    /// Calls fn(flat_index, point) for every grid point in lexicographic order.
    template <class Fn>
    void for_each(Fn&& fn) const
    {
        std::vector<std::size_t> r(dim(), 0);
        Coords x(dim());
        for (std::size_t j = 0; j < dim(); ++j) x[j] = coords_[j][0];
        for (std::uint64_t flat = 0; flat < size_; ++flat) {
            fn(flat, std::span<const double>(x));
            for (std::size_t j = dim(); j-- > 0;) {
                if (++r[j] < coords_[j].size()) {
                    x[j] = coords_[j][r[j]];
                    break;
                }
                r[j] = 0;
                x[j] = coords_[j][0];
            }
        }
    }

    static constexpr std::size_t npos = static_cast<std::size_t>(-1);

private:
    std::vector<std::vector<double>> coords_;
    std::uint64_t size_ = 0;
};

inline Grid make_grid(const Dataset& data)
{
    if (data.empty()) throw Error("make_grid: empty dataset");
    const std::size_t d = data.dim();
    std::vector<std::vector<double>> coords(d);
    for (std::size_t j = 0; j < d; ++j) {
        auto& c = coords[j];
        c.reserve(data.size());
        for (std::size_t i = 0; i < data.size(); ++i) c.push_back(data.row(i)[j]);
        std::sort(c.begin(), c.end());
        c.erase(std::unique(c.begin(), c.end()), c.end());
    }
    return Grid(std::move(coords));
}

inline Grid make_grid(std::span<const Point> pts)
{
    if (pts.empty()) throw Error("make_grid: empty dataset");
    const std::size_t d = pts.front().dim();
    for (const auto& p : pts)
        if (p.dim() != d) throw Error("make_grid: mixed dimensions");
    return make_grid(Dataset::from_points(pts));
}

/// Per-observation grid ranks, row-major (n x d).
inline std::vector<std::size_t> grid_ranks(const Grid& grid, const Dataset& data)
{
    std::vector<std::size_t> out(data.size() * data.dim());
    for (std::size_t i = 0; i < data.size(); ++i)
        for (std::size_t j = 0; j < data.dim(); ++j) {
            const auto r = grid.rank(j, data.row(i)[j]);
            if (r == Grid::npos) throw Error("grid_ranks: observation not on grid");
            out[i * data.dim() + j] = r;
        }
    return out;
}

/// Componentwise maximum of the points: the smallest x with every point <= x.
inline Coords grid_join(std::span<const Point> pts)
{
    if (pts.empty()) throw Error("grid_join: empty subset");
    Coords out(pts.front().coords().begin(), pts.front().coords().end());
    for (const auto& p : pts) {
        if (p.dim() != out.size()) throw Error("grid_join: mixed dimensions");
        for (std::size_t j = 0; j < out.size(); ++j) out[j] = std::max(out[j], p[j]);
    }
    return out;
}

inline Coords grid_join(const Dataset& data)
{
    if (data.empty()) throw Error("grid_join: empty subset");
    Coords out(data.row(0).begin(), data.row(0).end());
    for (std::size_t i = 1; i < data.size(); ++i)
        for (std::size_t j = 0; j < out.size(); ++j) out[j] = std::max(out[j], data.row(i)[j]);
    return out;
}

} // namespace smu
