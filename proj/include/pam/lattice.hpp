#pragma once

#include <algorithm>
#include <array>
#include <cstddef>
#include <cstdint>
#include <cstdlib>
#include <string>
#include <unordered_map>
#include <vector>

#include "pam/errors.hpp"

namespace pam {

inline constexpr int kMaxDim = 3;

/// A point of Z^d. Coordinates beyond `dim` are kept at zero so that the
/// built-in lexicographic order of std::array is the order of Z^d.
using Site = std::array<int, kMaxDim>;

inline int l1_norm(const Site& x, int dim) {
    int s = 0;
    for (int i = 0; i < dim; ++i) s += std::abs(x[i]);
    return s;
}

inline int linf_norm(const Site& x, int dim) {
    int s = 0;
    for (int i = 0; i < dim; ++i) s = std::max(s, std::abs(x[i]));
    return s;
}

inline Site operator-(const Site& a, const Site& b) {
    return {a[0] - b[0], a[1] - b[1], a[2] - b[2]};
}

inline Site operator+(const Site& a, const Site& b) {
    return {a[0] + b[0], a[1] + b[1], a[2] + b[2]};
}

inline std::string to_string(const Site& x, int dim) {
    std::string s = "(";
    for (int i = 0; i < dim; ++i) {
        if (i) s += ",";
        s += std::to_string(x[i]);
    }
    return s + ")";
}

inline void check_dim(int dim) {
    require(dim >= 1 && dim <= kMaxDim, ErrorKind::InvalidParameter,
            "dimension must be in [1, " + std::to_string(kMaxDim) + "], got " + std::to_string(dim));
}

struct SiteHash {
    std::size_t operator()(const Site& x) const noexcept {
        std::uint64_t h = 0x9E3779B97F4A7C15ull;
        for (int c : x) h = (h ^ static_cast<std::uint32_t>(c)) * 0x100000001B3ull + (h >> 29);
        return static_cast<std::size_t>(h);
    }
};

/// Cube center + [-radius, radius]^d, i.e. the ball B_radius(center) in the sup-norm.
struct Box {
    int dim = 1;
    Site center{};
    int radius = 0;

    std::size_t side() const { return static_cast<std::size_t>(2 * radius + 1); }

    std::size_t size() const {
        std::size_t n = 1;
        for (int i = 0; i < dim; ++i) n *= side();
        return n;
    }

    bool contains(const Site& x) const {
        for (int i = 0; i < dim; ++i)
            if (std::abs(x[i] - center[i]) > radius) return false;
        return true;
    }

    bool contains(const Box& other) const {
        for (int i = 0; i < dim; ++i)
            if (std::abs(other.center[i] - center[i]) + other.radius > radius) return false;
        return true;
    }

    /// Row-major linear index; the last coordinate varies fastest.
    std::size_t index(const Site& x) const {
        std::size_t idx = 0;
        for (int i = 0; i < dim; ++i) idx = idx * side() + static_cast<std::size_t>(x[i] - center[i] + radius);
        return idx;
    }

    Site site(std::size_t idx) const {
        Site x{};
        for (int i = dim - 1; i >= 0; --i) {
            x[i] = static_cast<int>(idx % side()) - radius + center[i];
            idx /= side();
        }
        return x;
    }

    /// Sup-norm distance from x to the complement of the box (0 on the outer layer).
    int margin(const Site& x) const {
        int m = radius;
        for (int i = 0; i < dim; ++i) m = std::min(m, radius - std::abs(x[i] - center[i]));
        return m;
    }
};

inline Box ball(int dim, const Site& center, int radius) { return Box{dim, center, radius}; }

/// Finite subset of Z^d with nearest-neighbour adjacency. Neighbour slots are
/// stored densely (2d per site) with -1 marking an exterior neighbour.
class LatticeDomain {
public:
    LatticeDomain() = default;

    static LatticeDomain from_box(const Box& box) {
        check_dim(box.dim);
        require(box.radius >= 0, ErrorKind::InvalidParameter, "box radius must be non-negative");
        std::vector<Site> sites(box.size());
        for (std::size_t i = 0; i < sites.size(); ++i) sites[i] = box.site(i);
        LatticeDomain d(box.dim, std::move(sites));
        d.box_ = box;
        d.is_box_ = true;
        return d;
    }

    static LatticeDomain from_sites(int dim, std::vector<Site> sites) {
        check_dim(dim);
        return LatticeDomain(dim, std::move(sites));
    }

    int dim() const { return dim_; }
    std::size_t size() const { return sites_.size(); }
    bool empty() const { return sites_.empty(); }
    const std::vector<Site>& sites() const { return sites_; }
    const Site& site(std::size_t i) const { return sites_[i]; }
    bool is_box() const { return is_box_; }
    const Box& box() const { return box_; }

    /// Index of x in sites(), or -1.
    long index_of(const Site& x) const {
        if (is_box_) return box_.contains(x) ? static_cast<long>(box_.index(x)) : -1;
        auto it = index_.find(x);
        return it == index_.end() ? -1 : static_cast<long>(it->second);
    }

    bool contains(const Site& x) const { return index_of(x) >= 0; }

    /// Neighbour slot j in [0, 2d) of site i: direction j/2, sign by parity.
    long neighbor(std::size_t i, int j) const { return neighbors_[i * 2 * dim_ + j]; }
    int degree() const { return 2 * dim_; }

    /// Exterior sites adjacent to the domain.
    std::vector<Site> boundary() const {
        std::vector<Site> out;
        for (std::size_t i = 0; i < size(); ++i)
            for (int j = 0; j < degree(); ++j)
                if (neighbor(i, j) < 0) out.push_back(step(sites_[i], j));
        std::sort(out.begin(), out.end());
        out.erase(std::unique(out.begin(), out.end()), out.end());
        return out;
    }

    /// Connected components as lists of site indices, each sorted ascending;
    /// components are ordered by their smallest index.
    std::vector<std::vector<std::size_t>> components() const {
        std::vector<long> label(size(), -1);
        std::vector<std::vector<std::size_t>> comps;
        std::vector<std::size_t> stack;
        for (std::size_t s = 0; s < size(); ++s) {
            if (label[s] >= 0) continue;
            const long c = static_cast<long>(comps.size());
            comps.emplace_back();
            label[s] = c;
            stack.assign(1, s);
            while (!stack.empty()) {
                const std::size_t i = stack.back();
                stack.pop_back();
                comps.back().push_back(i);
                for (int j = 0; j < degree(); ++j) {
                    const long n = neighbor(i, j);
                    if (n >= 0 && label[n] < 0) {
                        label[n] = c;
                        stack.push_back(static_cast<std::size_t>(n));
                    }
                }
            }
            std::sort(comps.back().begin(), comps.back().end());
        }
        return comps;
    }

    LatticeDomain subdomain(const std::vector<std::size_t>& indices) const {
        std::vector<Site> s;
        s.reserve(indices.size());
        for (auto i : indices) s.push_back(sites_[i]);
        return LatticeDomain(dim_, std::move(s));
    }

    Site step(const Site& x, int j) const {
        Site y = x;
        y[j / 2] += (j % 2 == 0) ? 1 : -1;
        return y;
    }

private:
    LatticeDomain(int dim, std::vector<Site> sites) : dim_(dim), sites_(std::move(sites)) {
        index_.reserve(sites_.size());
        for (std::size_t i = 0; i < sites_.size(); ++i) {
            for (int k = dim_; k < kMaxDim; ++k)
                require(sites_[i][k] == 0, ErrorKind::InvalidParameter, "site has coordinates beyond dim");
            const bool fresh = index_.emplace(sites_[i], i).second;
            require(fresh, ErrorKind::InvalidParameter, "duplicate site " + to_string(sites_[i], dim_));
        }
        neighbors_.assign(sites_.size() * 2 * dim_, -1);
        for (std::size_t i = 0; i < sites_.size(); ++i)
            for (int j = 0; j < 2 * dim_; ++j) {
                auto it = index_.find(step(sites_[i], j));
                if (it != index_.end()) neighbors_[i * 2 * dim_ + j] = static_cast<long>(it->second);
            }
    }

    int dim_ = 1;
    std::vector<Site> sites_;
    std::unordered_map<Site, std::size_t, SiteHash> index_;
    std::vector<long> neighbors_;
    Box box_{};
    bool is_box_ = false;
};

} // namespace pam
