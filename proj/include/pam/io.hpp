#pragma once

#include <cstdio>
#include <cstdlib>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <memory>
#include <ostream>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

#include <nlohmann/json.hpp>

#include "pam/errors.hpp"
#include "pam/lattice.hpp"

namespace pam {

/// 17 significant digits, so doubles round-trip exactly.
inline std::string format_double(double x) {
    if (std::isnan(x)) return "nan";
    if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

/// CSV with a header row. Only numbers and identifier-like strings are written, so
/// no quoting is needed; strings containing separators are rejected.
class CsvWriter {
public:
    CsvWriter(std::ostream& os, std::vector<std::string> header) : os_(&os), columns_(header.size()) {
        require(!header.empty(), ErrorKind::InvalidParameter, "CSV header must not be empty");
        write_fields(header);
    }

    CsvWriter(const std::filesystem::path& path, std::vector<std::string> header)
        : file_(std::make_unique<std::ofstream>(path, std::ios::binary)), os_(file_.get()), columns_(header.size()) {
        require(static_cast<bool>(*file_), ErrorKind::Resource, "cannot open " + path.string() + " for writing");
        require(!header.empty(), ErrorKind::InvalidParameter, "CSV header must not be empty");
        write_fields(header);
    }

    template <class... Ts>
    void row(const Ts&... values) {
        require(sizeof...(Ts) == columns_, ErrorKind::InternalConsistency,
                "CSV row has " + std::to_string(sizeof...(Ts)) + " fields, header has " + std::to_string(columns_));
        std::vector<std::string> f;
        f.reserve(sizeof...(Ts));
        (f.push_back(field(values)), ...);
        write_fields(f);
        ++rows_;
    }

    /// Row from pre-formatted fields.
    void row_fields(const std::vector<std::string>& f) {
        require(f.size() == columns_, ErrorKind::InternalConsistency, "CSV row width does not match header");
        write_fields(f);
        ++rows_;
    }

    std::size_t rows() const { return rows_; }
    void flush() { os_->flush(); }

    template <class T>
    static std::string field(const T& v) {
        if constexpr (std::is_same_v<T, bool>) {
            return v ? "1" : "0";
        } else if constexpr (std::is_floating_point_v<T>) {
            return format_double(static_cast<double>(v));
        } else if constexpr (std::is_integral_v<T>) {
            return std::to_string(v);
        } else {
            return std::string(std::string_view(v));
        }
    }

private:
    void write_fields(const std::vector<std::string>& f) {
        for (std::size_t i = 0; i < f.size(); ++i) {
            require(f[i].find_first_of(",\"\n\r") == std::string::npos, ErrorKind::InvalidParameter,
                    "CSV field '" + f[i] + "' contains a separator");
            if (i) *os_ << ',';
            *os_ << f[i];
        }
        *os_ << '\n';
        require(static_cast<bool>(*os_), ErrorKind::Resource, "CSV write failed");
    }

    std::unique_ptr<std::ofstream> file_;
    std::ostream* os_;
    std::size_t columns_;
    std::size_t rows_ = 0;
};

/// Coordinate column names x0..x{d-1} with an optional prefix.
inline std::vector<std::string> coord_columns(int dim, const std::string& prefix = "x") {
    std::vector<std::string> c;
    for (int i = 0; i < dim; ++i) c.push_back(prefix + std::to_string(i));
    return c;
}

inline std::vector<std::string> coord_fields(const Site& x, int dim) {
    std::vector<std::string> f;
    for (int i = 0; i < dim; ++i) f.push_back(std::to_string(x[i]));
    return f;
}

inline std::vector<std::string> concat(std::vector<std::string> a, const std::vector<std::string>& b) {
    a.insert(a.end(), b.begin(), b.end());
    return a;
}

inline void write_json(const std::filesystem::path& path, const nlohmann::json& j) {
    std::ofstream os(path, std::ios::binary);
    require(static_cast<bool>(os), ErrorKind::Resource, "cannot open " + path.string() + " for writing");
    os << j.dump(2) << '\n';
}

/// Shortest decimal form that round-trips, for human-edited files.
inline std::string format_double_short(double x) {
    if (std::isnan(x)) return "nan";
    if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
    char buf[40];
    if (x == std::trunc(x) && std::abs(x) < 1e15) {
        std::snprintf(buf, sizeof buf, "%.0f", x);
        return buf;
    }
    for (int p = 1; p <= 17; ++p) {
        std::snprintf(buf, sizeof buf, "%.*g", p, x);
        if (std::strtod(buf, nullptr) == x) break;
    }
    return buf;
}

/// Build provenance for manifests.
inline nlohmann::json build_info() {
    return {
        {"program", "pamlab"},
        {"version", "1.0.0"},
        {"compiler", __VERSION__},
        {"cxx_standard", static_cast<long>(__cplusplus)},
    };
}

} // namespace pam
