#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "cgmvp/errors.hpp"

namespace cgmvp {

// Dates are opaque ordered labels (ISO-8601 strings); no calendar arithmetic
// is done anywhere, windows are row-count based.
struct PriceMatrix {
    std::vector<std::string> dates;    // strictly increasing, length T_p
    std::vector<std::string> tickers;  // unique, length N
    Eigen::MatrixXd values;            // T_p x N, all entries > 0
};

struct ReturnMatrix {
    std::vector<std::string> dates;    // length T = T_p - 1
    std::vector<std::string> tickers;  // column order matches the price matrix
    Eigen::MatrixXd values;            // T x N simple daily returns, each > -1
};

struct SectorMap {
    std::map<std::string, std::string> entries;  // ticker -> sector name

    std::size_t size() const { return entries.size(); }
    bool contains(const std::string& ticker) const { return entries.count(ticker) > 0; }
    const std::string& sector_of(const std::string& ticker) const {
        auto it = entries.find(ticker);
        if (it == entries.end()) throw Error("ticker '" + ticker + "' not present in sector map");
        return it->second;
    }
};

namespace detail {

inline std::vector<std::string> split_csv_line(std::string_view line) {
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    std::vector<std::string> fields;
    std::size_t start = 0;
    while (true) {
        std::size_t comma = line.find(',', start);
        if (comma == std::string_view::npos) {
            fields.emplace_back(line.substr(start));
            break;
        }
        fields.emplace_back(line.substr(start, comma - start));
        start = comma + 1;
    }
    return fields;
}

inline bool is_iso_date(std::string_view s) {
    if (s.size() != 10 || s[4] != '-' || s[7] != '-') return false;
    for (std::size_t i : {0u, 1u, 2u, 3u, 5u, 6u, 8u, 9u})
        if (s[i] < '0' || s[i] > '9') return false;
    return true;
}

inline bool parse_double(std::string_view s, double& out) {
    const char* first = s.data();
    const char* last = s.data() + s.size();
    auto [ptr, ec] = std::from_chars(first, last, out);
    return ec == std::errc() && ptr == last && std::isfinite(out);
}

// Shortest decimal representation that round-trips the exact double.
inline std::string format_double(double v) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, ptr);
}

inline std::vector<std::string> read_lines(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open file: " + path);
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) lines.push_back(line);
    // drop trailing blank lines
    while (!lines.empty() && (lines.back().empty() || lines.back() == "\r")) lines.pop_back();
    return lines;
}

}  // namespace detail

/// Parse an adjusted-close price CSV. Header must be `date,<ticker1>,...`;
/// cells are positive decimal literals; dates ISO-8601 and strictly increasing.
/// Any missing, non-numeric, or non-positive cell is rejected with its location.
inline PriceMatrix load_prices(const std::string& path) {
    auto lines = detail::read_lines(path);
    if (lines.size() < 2) throw ConfigError(path + ": expected a header row and at least one data row");

    auto header = detail::split_csv_line(lines[0]);
    if (header.size() < 2 || header[0] != "date")
        throw ConfigError(path + ": header must start with 'date' followed by ticker columns");

    PriceMatrix out;
    out.tickers.assign(header.begin() + 1, header.end());
    for (std::size_t j = 0; j < out.tickers.size(); ++j) {
        if (out.tickers[j].empty())
            throw ConfigError(path + ": empty ticker name in header column " + std::to_string(j + 2));
        for (std::size_t l = 0; l < j; ++l)
            if (out.tickers[l] == out.tickers[j])
                throw ConfigError(path + ": duplicate ticker header '" + out.tickers[j] + "'");
    }

    const std::size_t n = out.tickers.size();
    const std::size_t rows = lines.size() - 1;
    out.values.resize(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(n));
    out.dates.reserve(rows);

    for (std::size_t r = 0; r < rows; ++r) {
        auto fields = detail::split_csv_line(lines[r + 1]);
        const std::string where = path + ": row " + std::to_string(r + 2);
        if (fields.size() != n + 1)
            throw ConfigError(where + ": expected " + std::to_string(n + 1) + " fields, got " +
                              std::to_string(fields.size()));
        if (!detail::is_iso_date(fields[0]))
            throw ConfigError(where + ": date '" + fields[0] + "' is not YYYY-MM-DD");
        if (!out.dates.empty() && fields[0] <= out.dates.back())
            throw ConfigError(where + ": dates not increasing ('" + fields[0] + "' after '" +
                              out.dates.back() + "')");
        out.dates.push_back(fields[0]);
        for (std::size_t j = 0; j < n; ++j) {
            const std::string& cell = fields[j + 1];
            if (cell.empty())
                throw ConfigError(where + ", column '" + out.tickers[j] + "': missing value");
            double v = 0.0;
            if (!detail::parse_double(cell, v))
                throw ConfigError(where + ", column '" + out.tickers[j] + "': non-numeric value '" + cell + "'");
            if (v <= 0.0)
                throw ConfigError(where + ", column '" + out.tickers[j] + "': non-positive price " + cell);
            out.values(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(j)) = v;
        }
    }
    return out;
}

/// Inverse of load_prices for the data model (exact value round-trip).
inline void write_prices(const PriceMatrix& prices, const std::string& path) {
    std::ofstream outf(path);
    if (!outf) throw ConfigError("cannot write file: " + path);
    outf << "date";
    for (const auto& t : prices.tickers) outf << ',' << t;
    outf << '\n';
    for (Eigen::Index r = 0; r < prices.values.rows(); ++r) {
        outf << prices.dates[static_cast<std::size_t>(r)];
        for (Eigen::Index j = 0; j < prices.values.cols(); ++j)
            outf << ',' << detail::format_double(prices.values(r, j));
        outf << '\n';
    }
}

/// Simple daily returns: values[t][i] = p[t+1][i] / p[t][i] - 1.
inline ReturnMatrix compute_returns(const PriceMatrix& prices) {
    const Eigen::Index tp = prices.values.rows();
    if (tp < 2) throw ConfigError("compute_returns: need at least 2 price rows, got " + std::to_string(tp));
    ReturnMatrix out;
    out.tickers = prices.tickers;
    out.dates.assign(prices.dates.begin() + 1, prices.dates.end());
    out.values = prices.values.bottomRows(tp - 1).array() / prices.values.topRows(tp - 1).array() - 1.0;
    return out;
}

/// Contiguous row slice [start_index, start_index + length), same tickers.
inline ReturnMatrix slice_window(const ReturnMatrix& returns, std::size_t start_index, std::size_t length) {
    const std::size_t t = static_cast<std::size_t>(returns.values.rows());
    if (start_index + length > t)
        throw ConfigError("slice_window: slice [" + std::to_string(start_index) + ", " +
                          std::to_string(start_index + length) + ") out of range for T=" + std::to_string(t));
    ReturnMatrix out;
    out.tickers = returns.tickers;
    out.dates.assign(returns.dates.begin() + static_cast<std::ptrdiff_t>(start_index),
                     returns.dates.begin() + static_cast<std::ptrdiff_t>(start_index + length));
    out.values = returns.values.middleRows(static_cast<Eigen::Index>(start_index),
                                           static_cast<Eigen::Index>(length));
    return out;
}

/// Column subset in the given index order, keeping all rows.
inline ReturnMatrix select_columns(const ReturnMatrix& returns, const std::vector<int>& columns) {
    ReturnMatrix out;
    out.dates = returns.dates;
    out.values.resize(returns.values.rows(), static_cast<Eigen::Index>(columns.size()));
    out.tickers.reserve(columns.size());
    for (std::size_t j = 0; j < columns.size(); ++j) {
        const int c = columns[j];
        if (c < 0 || c >= returns.values.cols())
            throw Error("select_columns: column index " + std::to_string(c) + " out of range");
        out.tickers.push_back(returns.tickers[static_cast<std::size_t>(c)]);
        out.values.col(static_cast<Eigen::Index>(j)) = returns.values.col(c);
    }
    return out;
}

/// Two-column CSV `ticker,sector`. Duplicate tickers and empty sectors are rejected;
/// tickers absent from a given universe are permitted and filtered at use.
inline SectorMap load_sector_map(const std::string& path) {
    auto lines = detail::read_lines(path);
    if (lines.empty()) throw ConfigError(path + ": empty sector file");
    auto header = detail::split_csv_line(lines[0]);
    if (header.size() != 2 || header[0] != "ticker" || header[1] != "sector")
        throw ConfigError(path + ": header must be 'ticker,sector'");

    SectorMap out;
    for (std::size_t r = 1; r < lines.size(); ++r) {
        auto fields = detail::split_csv_line(lines[r]);
        const std::string where = path + ": row " + std::to_string(r + 1);
        if (fields.size() != 2) throw ConfigError(where + ": expected 2 fields");
        if (fields[0].empty()) throw ConfigError(where + ": empty ticker");
        if (fields[1].empty()) throw ConfigError(where + ": empty sector for ticker '" + fields[0] + "'");
        if (!out.entries.emplace(fields[0], fields[1]).second)
            throw ConfigError(where + ": duplicate ticker '" + fields[0] + "'");
    }
    return out;
}

}  // namespace cgmvp
