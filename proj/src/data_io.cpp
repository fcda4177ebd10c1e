#include "covtest/data_io.hpp"

#include "covtest/errors.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>
#include <unordered_map>

namespace covtest {

namespace {

std::string_view trim(std::string_view s)
{
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) {
        s.remove_prefix(1);
    }
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) {
        s.remove_suffix(1);
    }
    if (s.size() >= 2 && s.front() == '"' && s.back() == '"') {
        s = s.substr(1, s.size() - 2);
    }
    return s;
}

std::vector<std::string_view> split_row(std::string_view line)
{
    std::vector<std::string_view> cells;
    std::size_t start = 0;
    while (true) {
        auto pos = line.find(',', start);
        if (pos == std::string_view::npos) {
            cells.push_back(trim(line.substr(start)));
            break;
        }
        cells.push_back(trim(line.substr(start, pos - start)));
        start = pos + 1;
    }
    return cells;
}

bool blank(std::string_view line)
{
    return std::all_of(line.begin(), line.end(),
                       [](char c) { return c == ' ' || c == '\t' || c == '\r'; });
}

std::string location(std::size_t row, std::string_view column)
{
    return "row " + std::to_string(row) + ", column '" + std::string(column) + "'";
}

double parse_cell(std::string_view cell, std::size_t row, std::string_view column)
{
    double value = 0.0;
    // from_chars rejects a leading '+', which some writers emit.
    std::string_view body = (!cell.empty() && cell.front() == '+') ? cell.substr(1) : cell;
    auto [ptr, ec] = std::from_chars(body.data(), body.data() + body.size(), value);
    if (body.empty() || ec != std::errc() || ptr != body.data() + body.size()) {
        fail(ErrorCategory::data,
             "non-numeric cell '" + std::string(cell) + "' at " + location(row, column));
    }
    if (!std::isfinite(value)) {
        fail(ErrorCategory::data,
             "non-finite value '" + std::string(cell) + "' at " + location(row, column));
    }
    return value;
}

void put_double(std::ostream& os, double v)
{
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    os.write(buf, ptr - buf);
}

}  // namespace

Dataset make_dataset(VectorXd y, MatrixXd S, VectorXd t,
                     std::optional<std::vector<std::string>> raw_cluster)
{
    const Eigen::Index n = y.size();
    if (n < 1) {
        fail(ErrorCategory::data, "dataset has zero rows");
    }
    if (t.size() != n || (S.cols() > 0 && S.rows() != n) || (raw_cluster && std::ssize(*raw_cluster) != n)) {
        fail(ErrorCategory::data, "column lengths differ");
    }
    if (S.cols() == 0) {
        S.resize(n, 0);
    }
    for (Eigen::Index i = 0; i < n; ++i) {
        if (!std::isfinite(y(i)) || !std::isfinite(t(i))) {
            fail(ErrorCategory::data, "non-finite value in row " + std::to_string(i + 1));
        }
        for (Eigen::Index j = 0; j < S.cols(); ++j) {
            if (!std::isfinite(S(i, j))) {
                fail(ErrorCategory::data, "non-finite value in row " + std::to_string(i + 1));
            }
        }
    }

    Dataset d;
    d.y = std::move(y);
    d.S = std::move(S);
    d.t = std::move(t);
    for (Eigen::Index j = 0; j < d.S.cols(); ++j) {
        d.s_names.push_back("s" + std::to_string(j + 1));
    }
    if (raw_cluster) {
        std::unordered_map<std::string, int> ids;
        std::vector<int> labels;
        labels.reserve(raw_cluster->size());
        for (const auto& raw : *raw_cluster) {
            auto [it, inserted] = ids.try_emplace(raw, static_cast<int>(ids.size()));
            labels.push_back(it->second);
        }
        d.n_clusters = static_cast<int>(ids.size());
        d.cluster = std::move(labels);
    }
    return d;
}

Dataset load_csv(const std::filesystem::path& path, const ColumnMap& columns)
{
    std::ifstream in(path);
    if (!in) {
        fail(ErrorCategory::config, "cannot open input file '" + path.string() + "'");
    }
    std::string line;
    if (!std::getline(in, line)) {
        fail(ErrorCategory::data, "input file '" + path.string() + "' is empty (header row required)");
    }
    if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) {
        line.erase(0, 3);
    }
    auto header = split_row(line);
    std::vector<std::string> names(header.begin(), header.end());
    auto find = [&](const std::string& name) -> std::size_t {
        auto it = std::find(names.begin(), names.end(), name);
        if (it == names.end()) {
            fail(ErrorCategory::config, "column '" + name + "' not found in '" + path.string() + "'");
        }
        return static_cast<std::size_t>(it - names.begin());
    };
    const std::size_t iy = find(columns.y);
    const std::size_t it = find(columns.t);
    std::vector<std::size_t> is;
    for (const auto& s : columns.s) {
        is.push_back(find(s));
    }
    std::optional<std::size_t> ic;
    if (columns.cluster) {
        ic = find(*columns.cluster);
    }

    std::vector<double> ys, ts, ss;
    std::vector<std::string> cl;
    std::size_t row = 0;
    while (std::getline(in, line)) {
        if (blank(line)) {
            continue;
        }
        ++row;
        auto cells = split_row(line);
        if (cells.size() != names.size()) {
            fail(ErrorCategory::data, "row " + std::to_string(row) + " has " + std::to_string(cells.size()) +
                                          " cells, header has " + std::to_string(names.size()));
        }
        ys.push_back(parse_cell(cells[iy], row, columns.y));
        ts.push_back(parse_cell(cells[it], row, columns.t));
        for (std::size_t k = 0; k < is.size(); ++k) {
            ss.push_back(parse_cell(cells[is[k]], row, columns.s[k]));
        }
        if (ic) {
            std::string_view label = cells[*ic];
            if (label.empty()) {
                fail(ErrorCategory::data, "missing cluster label at " + location(row, *columns.cluster));
            }
            cl.emplace_back(label);
        }
    }
    if (row == 0) {
        fail(ErrorCategory::data, "input file '" + path.string() + "' has no data rows");
    }

    const auto n = static_cast<Eigen::Index>(row);
    const auto p = static_cast<Eigen::Index>(is.size());
    VectorXd y = Eigen::Map<VectorXd>(ys.data(), n);
    VectorXd t = Eigen::Map<VectorXd>(ts.data(), n);
    MatrixXd S(n, p);
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = 0; j < p; ++j) {
            S(i, j) = ss[static_cast<std::size_t>(i * p + j)];
        }
    }
    std::optional<std::vector<std::string>> raw;
    if (ic) {
        raw = std::move(cl);
    }
    Dataset d = make_dataset(std::move(y), std::move(S), std::move(t), std::move(raw));
    d.y_name = columns.y;
    d.t_name = columns.t;
    d.s_names = columns.s;
    return d;
}

void write_csv(const Dataset& d, const std::filesystem::path& path)
{
    std::ofstream out(path);
    if (!out) {
        fail(ErrorCategory::config, "cannot write '" + path.string() + "'");
    }
    out << d.y_name << ',' << d.t_name;
    for (const auto& s : d.s_names) {
        out << ',' << s;
    }
    if (d.cluster) {
        out << ",cluster";
    }
    out << '\n';
    for (Eigen::Index i = 0; i < d.n(); ++i) {
        put_double(out, d.y(i));
        out << ',';
        put_double(out, d.t(i));
        for (Eigen::Index j = 0; j < d.p(); ++j) {
            out << ',';
            put_double(out, d.S(i, j));
        }
        if (d.cluster) {
            out << ',' << (*d.cluster)[static_cast<std::size_t>(i)];
        }
        out << '\n';
    }
    if (!out) {
        fail(ErrorCategory::config, "write to '" + path.string() + "' failed");
    }
}

DataSummary summarize(const Dataset& d)
{
    DataSummary s;
    s.n = d.n();
    s.p = d.p();
    s.units = d.units();
    s.range.t_min = d.t.minCoeff();
    s.range.t_max = d.t.maxCoeff();
    std::vector<double> t(d.t.data(), d.t.data() + d.t.size());
    std::sort(t.begin(), t.end());
    s.distinct_t = std::unique(t.begin(), t.end()) - t.begin();
    return s;
}

Dataset rescale_t(const Dataset& d)
{
    const double lo = d.t.minCoeff();
    const double hi = d.t.maxCoeff();
    if (!(hi > lo)) {
        fail(ErrorCategory::config, "cannot rescale a constant covariate t");
    }
    Dataset out = d;
    out.t = ((d.t.array() - lo) / (hi - lo)).matrix();
    return out;
}

}  // namespace covtest
