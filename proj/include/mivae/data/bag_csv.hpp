#pragma once

#include <charconv>
#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "mivae/data/bag.hpp"
#include "mivae/errors.hpp"

namespace mivae::data {

// Bag CSV layout:
//   bag_id,label,instance_label,f0,...,f{d-1}
// One row per instance. instance_label may be blank. Rows of a bag keep file order.

namespace detail {

inline std::vector<std::string_view> split_commas(std::string_view line) {
    std::vector<std::string_view> fields;
    std::size_t start = 0;
    while (true) {
        const std::size_t pos = line.find(',', start);
        if (pos == std::string_view::npos) {
            fields.push_back(line.substr(start));
            break;
        }
        fields.push_back(line.substr(start, pos - start));
        start = pos + 1;
    }
    return fields;
}

inline std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
}

inline bool parse_double(std::string_view text, double& out) {
    text = trim(text);
    if (!text.empty() && text.front() == '+') text.remove_prefix(1);
    if (text.empty()) return false;
    auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), out);
    return ec == std::errc() && ptr == text.data() + text.size();
}

inline std::string format_double(double v) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, ptr);
}

} // namespace detail

inline MilDataset read_bag_csv(std::istream& in, const std::string& source = "<stream>") {
    std::string line;
    std::size_t line_no = 0;
    if (!std::getline(in, line)) throw DataError(source + ": empty file");
    ++line_no;
    auto header = detail::split_commas(detail::trim(line));
    if (header.size() < 4 || detail::trim(header[0]) != "bag_id" || detail::trim(header[1]) != "label" ||
        detail::trim(header[2]) != "instance_label") {
        throw ParseError(source, line_no, "header must start with bag_id,label,instance_label and list features");
    }
    const std::size_t dim = header.size() - 3;
    for (std::size_t k = 0; k < dim; ++k) {
        if (detail::trim(header[3 + k]) != "f" + std::to_string(k)) {
            throw ParseError(source, line_no, "feature column " + std::to_string(k) + " must be named f" + std::to_string(k));
        }
    }

    struct Pending {
        std::string id;
        int label;
        std::vector<double> values;
        std::vector<int> instance_labels;
        std::size_t labelled = 0;
        std::size_t rows = 0;
    };
    std::vector<Pending> pending;
    std::unordered_map<std::string, std::size_t> index;

    while (std::getline(in, line)) {
        ++line_no;
        const std::string_view row = detail::trim(line);
        if (row.empty()) continue;
        auto fields = detail::split_commas(row);
        if (fields.size() != header.size()) {
            throw ParseError(source, line_no, "expected " + std::to_string(header.size()) + " fields, found " +
                                                  std::to_string(fields.size()));
        }
        const std::string id(detail::trim(fields[0]));
        if (id.empty()) throw ParseError(source, line_no, "empty bag_id");
        const std::string_view label_text = detail::trim(fields[1]);
        if (label_text != "0" && label_text != "1") throw ParseError(source, line_no, "label must be 0 or 1");
        const int label = label_text == "1" ? 1 : 0;
        const std::string_view inst_text = detail::trim(fields[2]);
        if (!inst_text.empty() && inst_text != "0" && inst_text != "1") {
            throw ParseError(source, line_no, "instance_label must be 0, 1 or blank");
        }

        auto [it, inserted] = index.emplace(id, pending.size());
        if (inserted) pending.push_back({id, label, {}, {}, 0, 0});
        Pending& bag = pending[it->second];
        if (bag.label != label) {
            throw DataError(source + ":" + std::to_string(line_no) + ": bag '" + id +
                            "' has inconsistent labels 0 and 1");
        }
        for (std::size_t k = 0; k < dim; ++k) {
            double v = 0.0;
            if (!detail::parse_double(fields[3 + k], v)) {
                throw ParseError(source, line_no, "non-numeric value '" + std::string(detail::trim(fields[3 + k])) +
                                                      "' in column f" + std::to_string(k));
            }
            bag.values.push_back(v);
        }
        bag.instance_labels.push_back(inst_text == "1" ? 1 : 0);
        if (!inst_text.empty()) ++bag.labelled;
        ++bag.rows;
    }

    MilDataset ds;
    ds.name = std::filesystem::path(source).stem().string();
    ds.feature_dim = dim;
    if (pending.empty()) throw DataError(source + ": no instance rows");
    for (auto& p : pending) {
        Bag bag;
        bag.id = p.id;
        bag.label = p.label;
        bag.instances = diff::Tensor({p.rows, dim}, std::move(p.values));
        if (p.labelled == p.rows) {
            bag.instance_labels = std::move(p.instance_labels);
        } else if (p.labelled != 0) {
            throw DataError(source + ": bag '" + p.id + "' has instance labels on only some rows");
        }
        ds.bags.push_back(std::move(bag));
    }
    ds.validate();
    return ds;
}

inline MilDataset load_bag_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open dataset file '" + path.string() + "'");
    MilDataset ds = read_bag_csv(in, path.string());
    ds.name = path.stem().string();
    return ds;
}

// Values are written in shortest round-trip form, so reading back is exact.
inline void write_bag_csv(const MilDataset& ds, std::ostream& out) {
    out << "bag_id,label,instance_label";
    for (std::size_t k = 0; k < ds.feature_dim; ++k) out << ",f" << k;
    out << '\n';
    for (const Bag& bag : ds.bags) {
        for (std::size_t j = 0; j < bag.size(); ++j) {
            out << bag.id << ',' << bag.label << ',';
            if (bag.instance_labels) out << (*bag.instance_labels)[j];
            for (double v : bag.instances.row_span(j)) out << ',' << detail::format_double(v);
            out << '\n';
        }
    }
}

inline void write_bag_csv(const MilDataset& ds, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw Error("cannot write '" + path.string() + "'");
    write_bag_csv(ds, out);
    if (!out) throw Error("write failed for '" + path.string() + "'");
}

} // namespace mivae::data
