#ifndef PROBEGRID_IO_HPP
#define PROBEGRID_IO_HPP

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "errors.hpp"
#include "feeder.hpp"
#include "graph.hpp"
#include "probing.hpp"

namespace probegrid {

namespace detail {

struct Token {
    std::string text;
    int column = 0;  // 1-based
};

inline std::vector<Token> tokenize(const std::string& line) {
    std::vector<Token> out;
    std::size_t i = 0;
    while (i < line.size()) {
        if (line[i] == '#') break;
        if (std::isspace(static_cast<unsigned char>(line[i]))) {
            ++i;
            continue;
        }
        const std::size_t start = i;
        while (i < line.size() && !std::isspace(static_cast<unsigned char>(line[i])) && line[i] != '#') ++i;
        out.push_back({line.substr(start, i - start), static_cast<int>(start) + 1});
    }
    return out;
}

inline double parse_double(const std::string& src, int line, const Token& t) {
    try {
        std::size_t used = 0;
        const double v = std::stod(t.text, &used);
        if (used == t.text.size() && std::isfinite(v)) return v;
    } catch (const std::exception&) {
    }
    throw ParseError(src, line, t.column, "expected a number, got '" + t.text + "'");
}

inline long long parse_int(const std::string& src, int line, const Token& t) {
    try {
        std::size_t used = 0;
        const long long v = std::stoll(t.text, &used);
        if (used == t.text.size()) return v;
    } catch (const std::exception&) {
    }
    throw ParseError(src, line, t.column, "expected an integer, got '" + t.text + "'");
}

}  // namespace detail

/// Parses the plain-text feeder format.
///
///     name <word>
///     buses <N>
///     line <id> <from> <to> <r> <x> <switchable 0|1> [status 0|1]
///     load <bus> <p> <q>
///
/// `#` starts a comment. A line without an explicit status is energized unless
/// it is switchable. Buses without a `load` row carry no load.
inline Feeder parse_feeder(std::istream& in, const std::string& source = "<feeder>") {
    using detail::parse_double;
    using detail::parse_int;
    std::string name;
    int buses = -1;
    int buses_line = 0;
    std::vector<Line> lines;
    StatusVector status;
    std::vector<std::pair<int, int>> line_pos;
    std::set<int> ids;
    std::map<int, std::pair<double, double>> loads;

    std::string raw;
    int lineno = 0;
    while (std::getline(in, raw)) {
        ++lineno;
        const auto tok = detail::tokenize(raw);
        if (tok.empty()) continue;
        const std::string& kw = tok[0].text;
        auto need = [&](std::size_t lo, std::size_t hi) {
            if (tok.size() < lo || tok.size() > hi) {
                const int col = tok.size() < lo ? static_cast<int>(raw.size()) + 1 : tok[hi].column;
                throw ParseError(source, lineno, col,
                                 "'" + kw + "' expects " + std::to_string(lo - 1) +
                                     (hi > lo ? "-" + std::to_string(hi - 1) : std::string()) + " fields");
            }
        };
        if (kw == "name") {
            need(2, 2);
            name = tok[1].text;
        } else if (kw == "buses") {
            need(2, 2);
            const long long n = parse_int(source, lineno, tok[1]);
            if (n < 1) throw ParseError(source, lineno, tok[1].column, "bus count must be positive");
            buses = static_cast<int>(n);
            buses_line = lineno;
        } else if (kw == "line") {
            need(7, 8);
            Line ln;
            ln.id = static_cast<int>(parse_int(source, lineno, tok[1]));
            ln.from = static_cast<int>(parse_int(source, lineno, tok[2]));
            ln.to = static_cast<int>(parse_int(source, lineno, tok[3]));
            ln.r = parse_double(source, lineno, tok[4]);
            ln.x = parse_double(source, lineno, tok[5]);
            const long long sw = parse_int(source, lineno, tok[6]);
            if (sw != 0 && sw != 1) throw ParseError(source, lineno, tok[6].column, "switchable flag must be 0 or 1");
            ln.switchable = sw == 1;
            if (!ids.insert(ln.id).second)
                throw ParseError(source, lineno, tok[1].column, "duplicate line id " + std::to_string(ln.id));
            if (!(ln.r > 0.0)) throw ParseError(source, lineno, tok[4].column, "resistance must be positive");
            if (!(ln.x > 0.0)) throw ParseError(source, lineno, tok[5].column, "reactance must be positive");
            if (ln.from == ln.to) throw ParseError(source, lineno, tok[3].column, "line endpoints must differ");
            int st = ln.switchable ? 0 : 1;
            if (tok.size() == 8) {
                const long long s = parse_int(source, lineno, tok[7]);
                if (s != 0 && s != 1) throw ParseError(source, lineno, tok[7].column, "status must be 0 or 1");
                st = static_cast<int>(s);
            }
            lines.push_back(ln);
            status.push_back(st);
            line_pos.emplace_back(lineno, tok[2].column);
        } else if (kw == "load") {
            need(4, 4);
            const int bus = static_cast<int>(parse_int(source, lineno, tok[1]));
            if (loads.count(bus)) throw ParseError(source, lineno, tok[1].column, "duplicate load row");
            loads[bus] = {parse_double(source, lineno, tok[2]), parse_double(source, lineno, tok[3])};
            if (buses > 0 && (bus < 1 || bus > buses))
                throw ParseError(source, lineno, tok[1].column, "load bus out of range");
        } else {
            throw ParseError(source, lineno, tok[0].column, "unknown keyword '" + kw + "'");
        }
    }
    if (buses < 0) throw ParseError(source, lineno + 1, 1, "missing 'buses' declaration");
    for (std::size_t l = 0; l < lines.size(); ++l) {
        const auto& ln = lines[l];
        if (ln.from < 0 || ln.from > buses || ln.to < 0 || ln.to > buses)
            throw ParseError(source, line_pos[l].first, line_pos[l].second, "line endpoint out of range");
    }
    UnionFind uf(buses + 1);
    int comps = buses + 1;
    for (const auto& ln : lines)
        if (uf.unite(ln.from, ln.to)) --comps;
    if (comps != 1) throw ParseError(source, buses_line, 1, "candidate graph is disconnected");

    VectorXd p = VectorXd::Zero(buses);
    VectorXd q = VectorXd::Zero(buses);
    for (const auto& [bus, pq] : loads) {
        if (bus < 1 || bus > buses) throw ParseError(source, lineno, 1, "load bus out of range");
        p[bus - 1] = pq.first;
        q[bus - 1] = pq.second;
    }
    try {
        return Feeder(buses, std::move(lines), std::move(status), std::move(p), std::move(q), name);
    } catch (const std::exception& e) {
        throw ParseError(source, lineno, 1, e.what());
    }
}

inline Feeder load_feeder(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open feeder file " + path.string());
    return parse_feeder(in, path.string());
}

inline std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline void write_feeder(std::ostream& out, const Feeder& f) {
    if (!f.name().empty()) out << "name " << f.name() << '\n';
    out << "buses " << f.bus_count() << '\n';
    out << "# line id from to r x switchable status\n";
    for (int l = 0; l < f.line_count(); ++l) {
        const auto& ln = f.line(l);
        out << "line " << ln.id << ' ' << ln.from << ' ' << ln.to << ' ' << format_double(ln.r) << ' '
            << format_double(ln.x) << ' ' << (ln.switchable ? 1 : 0) << ' ' << f.status()[l] << '\n';
    }
    out << "# load bus p q\n";
    for (int n = 0; n < f.bus_count(); ++n)
        if (f.p_load()[n] != 0.0 || f.q_load()[n] != 0.0)
            out << "load " << n + 1 << ' ' << format_double(f.p_load()[n]) << ' ' << format_double(f.q_load()[n])
                << '\n';
}

inline void write_matrix_csv(const std::filesystem::path& path, const MatrixXd& m) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        for (Eigen::Index j = 0; j < m.cols(); ++j) {
            if (j) out << ',';
            out << format_double(m(i, j));
        }
        out << '\n';
    }
    if (!out) throw std::runtime_error("write failed for " + path.string());
}

inline MatrixXd read_matrix_csv(const std::filesystem::path& path, Eigen::Index rows, Eigen::Index cols) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    MatrixXd m(rows, cols);
    std::string raw;
    Eigen::Index i = 0;
    while (std::getline(in, raw)) {
        if (raw.empty()) continue;
        if (i >= rows) throw ParseError(path.string(), static_cast<int>(i) + 1, 1, "too many rows");
        std::stringstream ss(raw);
        std::string cell;
        Eigen::Index j = 0;
        int col = 1;
        while (std::getline(ss, cell, ',')) {
            if (j >= cols) throw ParseError(path.string(), static_cast<int>(i) + 1, col, "too many columns");
            m(i, j++) = detail::parse_double(path.string(), static_cast<int>(i) + 1, {cell, col});
            col += static_cast<int>(cell.size()) + 1;
        }
        if (j != cols) throw ParseError(path.string(), static_cast<int>(i) + 1, col, "too few columns");
        ++i;
    }
    if (i != rows) throw ParseError(path.string(), static_cast<int>(i) + 1, 1, "too few rows");
    return m;
}

/// Writes `manifest.json` plus one CSV per matrix into `dir`.
inline void export_dataset(const ProbingDataset& ds, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    nlohmann::ordered_json man;
    man["format"] = "probegrid-dataset";
    man["version"] = 1;
    man["bus_count"] = ds.bus_count();
    man["slot_count"] = ds.slot_count();
    man["probed_buses"] = ds.buses;
    man["seed"] = ds.seed;
    man["model"] = to_string(ds.model);
    write_matrix_csv(dir / "V.csv", ds.V);
    write_matrix_csv(dir / "delta.csv", ds.delta);
    write_matrix_csv(dir / "W.csv", ds.W);
    if (ds.theta_true) write_matrix_csv(dir / "theta_true.csv", *ds.theta_true);
    if (ds.status_true) man["status_true"] = *ds.status_true;
    man["has_theta_true"] = ds.theta_true.has_value();
    std::ofstream out(dir / "manifest.json", std::ios::binary);
    out << man.dump(2) << '\n';
    if (!out) throw std::runtime_error("cannot write manifest in " + dir.string());
}

inline ProbingDataset import_dataset(const std::filesystem::path& dir) {
    std::ifstream in(dir / "manifest.json");
    if (!in) throw std::runtime_error("cannot open " + (dir / "manifest.json").string());
    nlohmann::json man;
    try {
        man = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError((dir / "manifest.json").string(), 0, 0, e.what());
    }
    if (man.value("format", "") != "probegrid-dataset")
        throw ParseError((dir / "manifest.json").string(), 0, 0, "not a probegrid dataset manifest");
    ProbingDataset ds;
    const int n = man.at("bus_count").get<int>();
    const int t = man.at("slot_count").get<int>();
    ds.buses = man.at("probed_buses").get<std::vector<int>>();
    ds.seed = man.value("seed", std::uint64_t{0});
    ds.model = man.value("model", "linear") == "ac" ? PowerModel::Ac : PowerModel::Linear;
    ds.V = read_matrix_csv(dir / "V.csv", n, t);
    ds.delta = read_matrix_csv(dir / "delta.csv", static_cast<Eigen::Index>(ds.buses.size()), t);
    ds.W = read_matrix_csv(dir / "W.csv", n, n);
    if (man.value("has_theta_true", false)) ds.theta_true = read_matrix_csv(dir / "theta_true.csv", n, n);
    if (man.contains("status_true")) ds.status_true = man["status_true"].get<StatusVector>();
    return ds;
}

}  // namespace probegrid

#endif  // PROBEGRID_IO_HPP
