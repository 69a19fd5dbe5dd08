#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <functional>
#include <numbers>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pam/errors.hpp"
#include "pam/lattice.hpp"
#include "pam/rng.hpp"

namespace pam {

// Iterated logarithms and their guarded variants.
inline double ln2(double x) { return std::log(std::log(x)); }
inline double ln3(double x) { return std::log(std::log(std::log(x))); }
inline double ln2_plus(double x) { return ln2(std::max(x, std::numbers::e)); }
inline double ln3_plus(double x) { return ln3(std::max(x, std::exp(std::numbers::e))); }

/// Maps a uniform U in (0,1) to a potential value. The shipped law is the
/// exact doubly-exponential one, P(xi > r) = exp(-e^{r/rho}).
using QuantileFunction = std::function<double(double u, double rho)>;

inline double doubly_exponential_quantile(double u, double rho) { return rho * std::log(std::log(1.0 / u)); }

/// CDF of the doubly-exponential law: P(xi <= r) = 1 - exp(-e^{r/rho}).
inline double doubly_exponential_cdf(double r, double rho) { return -std::expm1(-std::exp(r / rho)); }

inline constexpr std::size_t kDefaultMaxSites = 10'000'000;

/// i.i.d. potential on a box window. Immutable after construction.
class PotentialField {
public:
    PotentialField(Box window, std::vector<double> values, double rho, std::uint64_t seed, std::string rng_algorithm)
        : window_(window), values_(std::move(values)), rho_(rho), seed_(seed), rng_algorithm_(std::move(rng_algorithm)) {
        require(values_.size() == window_.size(), ErrorKind::InvalidParameter, "field size does not match window");
    }

    int dim() const { return window_.dim; }
    const Box& window() const { return window_; }
    double rho() const { return rho_; }
    std::uint64_t seed() const { return seed_; }
    const std::string& rng_algorithm() const { return rng_algorithm_; }
    const std::vector<double>& values() const { return values_; }
    std::size_t size() const { return values_.size(); }

    bool contains(const Site& x) const { return window_.contains(x); }

    double operator()(const Site& x) const {
        if (!window_.contains(x)) fail(ErrorKind::Window, "site " + to_string(x, dim()) + " outside field window");
        return values_[window_.index(x)];
    }

    /// Potential restricted to the sites of a domain, in domain order.
    std::vector<double> restrict_to(const LatticeDomain& domain) const {
        std::vector<double> v(domain.size());
        for (std::size_t i = 0; i < domain.size(); ++i) v[i] = (*this)(domain.site(i));
        return v;
    }

private:
    Box window_;
    std::vector<double> values_;
    double rho_;
    std::uint64_t seed_;
    std::string rng_algorithm_;
};

struct FieldOptions {
    std::size_t max_sites = kDefaultMaxSites;
    QuantileFunction quantile = doubly_exponential_quantile;
    std::string law = "doubly-exponential";
};

/// Uniform attached to a lattice site. Draws are addressed by the site
/// coordinates, so nested or shifted windows with the same seed agree on
/// their common sites.
inline double site_uniform(std::uint64_t seed, const Site& x) {
    const std::uint64_t key = splitmix64(seed ^ stream_tag("potential"));
    const auto out = philox4x32_10(
        {static_cast<std::uint32_t>(x[0]), static_cast<std::uint32_t>(x[1]), static_cast<std::uint32_t>(x[2]), 0u},
        {static_cast<std::uint32_t>(key), static_cast<std::uint32_t>(key >> 32)});
    return to_open01((std::uint64_t{out[1]} << 32) | out[0]);
}

inline std::string field_rng_algorithm() { return std::string(Philox::algorithm) + "/site-addressed"; }

inline PotentialField sample_field(int dim, Box window, double rho, std::uint64_t seed, const FieldOptions& opts = {}) {
    check_dim(dim);
    window.dim = dim;
    require(rho > 0 && std::isfinite(rho), ErrorKind::InvalidParameter, "rho must be positive, got " + std::to_string(rho));
    require(window.radius >= 0, ErrorKind::InvalidParameter, "window must be non-empty");
    const std::size_t n = window.size();
    require(n <= opts.max_sites, ErrorKind::Resource,
            "window of " + std::to_string(n) + " sites exceeds budget of " + std::to_string(opts.max_sites));
    std::vector<double> values(n);
    for (std::size_t i = 0; i < n; ++i) values[i] = opts.quantile(site_uniform(seed, window.site(i)), rho);
    std::string algo = field_rng_algorithm();
    if (opts.law != "doubly-exponential") algo += "/" + opts.law;
    return PotentialField(window, std::move(values), rho, seed, std::move(algo));
}

/// Level with Prob(xi(0) > a) = L^{-d}: rho * ln(d ln L).
inline double hat_a(double L, int dim, double rho) {
    require(L >= 2, ErrorKind::InvalidParameter, "hat_a needs L >= 2, got " + std::to_string(L));
    return rho * std::log(dim * std::log(L));
}

struct ScaleSet {
    double t = 0;
    double d_t = 0;     // fluctuation scale of (1/t) ln U(t)
    double r_t = 0;     // typical size of |Z_t|
    std::int64_t L_t = 0;  // macro-box radius
    std::int64_t N_t = 0;
    double hat_a_L = 0; // hat_a(L_t)
};

inline ScaleSet scales(double t, int dim, double rho) {
    check_dim(dim);
    require(rho > 0, ErrorKind::InvalidParameter, "rho must be positive");
    require(t > std::exp(std::numbers::e), ErrorKind::InvalidParameter,
            "scales need t > e^e so that ln3 t > 0, got t = " + std::to_string(t));
    ScaleSet s;
    s.t = t;
    s.d_t = rho / (dim * std::log(t));
    s.r_t = t * s.d_t / ln3(t);
    s.L_t = static_cast<std::int64_t>(std::floor(t * ln2_plus(t)));
    s.N_t = static_cast<std::int64_t>(std::floor(0.5 * std::sqrt(rho * t / dim)));
    s.hat_a_L = hat_a(static_cast<double>(s.L_t), dim, rho);
    return s;
}

// --- persistence --------------------------------------------------------------------------

inline constexpr char kFieldMagic[8] = {'P', 'A', 'M', 'F', 'I', 'E', 'L', 'D'};
inline constexpr std::uint32_t kFieldFormatVersion = 1;

inline nlohmann::json field_metadata(const PotentialField& f) {
    nlohmann::json j;
    j["format_version"] = kFieldFormatVersion;
    j["dim"] = f.dim();
    j["center"] = std::vector<int>(f.window().center.begin(), f.window().center.begin() + f.dim());
    j["radius"] = f.window().radius;
    j["sites"] = f.size();
    j["rho"] = f.rho();
    j["seed"] = f.seed();
    j["rng_algorithm"] = f.rng_algorithm();
    j["layout"] = "row-major, last coordinate fastest, little-endian float64";
    return j;
}

namespace detail {
template <class T>
void put(std::ostream& os, const T& v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}
template <class T>
T get(std::istream& is) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) fail(ErrorKind::Format, "truncated field file");
    return v;
}
} // namespace detail

/// Binary container plus `<path>.json` metadata sidecar.
inline void save_field(const PotentialField& f, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    require(bool(os), ErrorKind::Resource, "cannot open " + path + " for writing");
    os.write(kFieldMagic, sizeof(kFieldMagic));
    detail::put<std::uint32_t>(os, kFieldFormatVersion);
    detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(f.dim()));
    for (int i = 0; i < f.dim(); ++i) detail::put<std::int32_t>(os, f.window().center[i]);
    detail::put<std::int32_t>(os, f.window().radius);
    detail::put<double>(os, f.rho());
    detail::put<std::uint64_t>(os, f.seed());
    detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(f.rng_algorithm().size()));
    os.write(f.rng_algorithm().data(), static_cast<std::streamsize>(f.rng_algorithm().size()));
    os.write(reinterpret_cast<const char*>(f.values().data()), static_cast<std::streamsize>(f.size() * sizeof(double)));
    require(bool(os), ErrorKind::Resource, "write failed for " + path);
    std::ofstream js(path + ".json");
    js << field_metadata(f).dump(2) << "\n";
}

inline PotentialField load_field(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    require(bool(is), ErrorKind::Resource, "cannot open " + path);
    char magic[sizeof(kFieldMagic)];
    is.read(magic, sizeof(magic));
    require(is && std::memcmp(magic, kFieldMagic, sizeof(magic)) == 0, ErrorKind::Format, path + " is not a field file");
    const auto version = detail::get<std::uint32_t>(is);
    require(version == kFieldFormatVersion, ErrorKind::Format, "unsupported field format version " + std::to_string(version));
    Box w;
    w.dim = static_cast<int>(detail::get<std::uint32_t>(is));
    check_dim(w.dim);
    for (int i = 0; i < w.dim; ++i) w.center[i] = detail::get<std::int32_t>(is);
    w.radius = detail::get<std::int32_t>(is);
    require(w.radius >= 0, ErrorKind::Format, "negative radius in field file");
    const double rho = detail::get<double>(is);
    const auto seed = detail::get<std::uint64_t>(is);
    const auto len = detail::get<std::uint32_t>(is);
    std::string algo(len, '\0');
    is.read(algo.data(), len);
    std::vector<double> values(w.size());
    is.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(values.size() * sizeof(double)));
    require(bool(is), ErrorKind::Format, "truncated field data in " + path);
    return PotentialField(w, std::move(values), rho, seed, std::move(algo));
}

} // namespace pam
