#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "caro/common.hpp"
#include "caro/metrics.hpp"

namespace caro {

struct Dataset {
    std::vector<ResponseItem> items;
    ScoreScale scale;
    std::string provenance;

    Dataset() : scale(2) {}

    bool fully_labeled() const {
        for (const auto& item : items)
            if (!item.label) return false;
        return !items.empty();
    }
};

// ─── Loading ─────────────────────────────────────────────────────────

namespace detail {

inline ScoreScale infer_or_check_scale(std::vector<ResponseItem>& items, int num_classes,
                                       const std::string& source) {
    int max_label = -1;
    std::set<std::string> seen;
    for (const auto& item : items) {
        if (item.id.empty()) throw Error(Errc::invalid_input, source + ": item with empty id");
        if (!seen.insert(item.id).second)
            throw Error(Errc::invalid_input, source + ": duplicate response id " + item.id);
        if (item.label) max_label = std::max(max_label, *item.label);
    }
    int k = num_classes;
    if (k <= 0) {
        if (max_label < 0)
            throw Error(Errc::invalid_input,
                        source + ": cannot infer the score scale from unlabeled data; "
                                 "specify num_classes");
        k = std::max(2, max_label + 1);
    }
    ScoreScale scale(k);
    for (const auto& item : items) {
        if (item.label && !scale.valid_label(*item.label))
            throw Error(Errc::invalid_input, source + ": item " + item.id + " has label " +
                                                 std::to_string(*item.label) +
                                                 " outside 0.." + std::to_string(k - 1));
    }
    return scale;
}

// Minimal RFC-4180: quoted fields, doubled quotes, embedded newlines.
inline std::vector<std::vector<std::string>> parse_csv(const std::string& content) {
    std::vector<std::vector<std::string>> rows;
    std::vector<std::string> row;
    std::string field;
    bool quoted = false;
    std::size_t i = 0;
    auto end_field = [&] {
        row.push_back(field);
        field.clear();
    };
    auto end_row = [&] {
        end_field();
        bool empty = row.size() == 1 && row[0].empty();
        if (!empty) rows.push_back(row);
        row.clear();
    };
    while (i < content.size()) {
        char c = content[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < content.size() && content[i + 1] == '"') {
                    field += '"';
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                field += c;
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            end_field();
        } else if (c == '\n') {
            if (!field.empty() && field.back() == '\r') field.pop_back();
            end_row();
        } else {
            field += c;
        }
        ++i;
    }
    if (!field.empty() || !row.empty()) end_row();
    return rows;
}

}  // namespace detail

// Line-delimited JSON records {id, text, label}; label optional.
inline Dataset load_dataset_jsonl(const std::filesystem::path& path, int num_classes = 0) {
    std::ifstream in(path);
    if (!in) throw Error(Errc::invalid_input, "cannot open dataset: " + path.string());
    Dataset ds;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        nlohmann::json record = nlohmann::json::parse(line, nullptr, false);
        if (record.is_discarded())
            throw Error(Errc::invalid_input,
                        path.string() + ":" + std::to_string(line_no) + ": invalid JSON");
        ResponseItem item;
        if (!record.contains("id") || !record.contains("text"))
            throw Error(Errc::invalid_input, path.string() + ":" + std::to_string(line_no) +
                                                 ": record needs 'id' and 'text'");
        item.id = record["id"].is_string() ? record["id"].get<std::string>()
                                           : record["id"].dump();
        item.text = record["text"].get<std::string>();
        if (record.contains("label") && !record["label"].is_null())
            item.label = record["label"].get<int>();
        ds.items.push_back(std::move(item));
    }
    ds.scale = detail::infer_or_check_scale(ds.items, num_classes, path.string());
    ds.provenance = path.string() + " (jsonl)";
    return ds;
}

// CSV with an (id,text,label) header; label column optional.
inline Dataset load_dataset_csv(const std::filesystem::path& path, int num_classes = 0) {
    std::ifstream in(path);
    if (!in) throw Error(Errc::invalid_input, "cannot open dataset: " + path.string());
    std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    auto rows = detail::parse_csv(content);
    if (rows.empty()) throw Error(Errc::invalid_input, path.string() + ": empty CSV");

    std::map<std::string, std::size_t> cols;
    for (std::size_t c = 0; c < rows[0].size(); ++c) cols[to_lower(trim(rows[0][c]))] = c;
    if (!cols.count("id") || !cols.count("text"))
        throw Error(Errc::invalid_input, path.string() + ": CSV needs 'id' and 'text' columns");

    Dataset ds;
    for (std::size_t r = 1; r < rows.size(); ++r) {
        const auto& row = rows[r];
        auto cell = [&](const std::string& name) -> std::string {
            auto it = cols.find(name);
            if (it == cols.end() || it->second >= row.size()) return "";
            return row[it->second];
        };
        ResponseItem item;
        item.id = trim(cell("id"));
        item.text = cell("text");
        std::string label = trim(cell("label"));
        if (!label.empty()) {
            try {
                item.label = std::stoi(label);
            } catch (...) {
                throw Error(Errc::invalid_input, path.string() + ": row " + std::to_string(r) +
                                                     " has a non-integer label '" + label + "'");
            }
        }
        ds.items.push_back(std::move(item));
    }
    ds.scale = detail::infer_or_check_scale(ds.items, num_classes, path.string());
    ds.provenance = path.string() + " (csv)";
    return ds;
}

inline Dataset load_dataset(const std::filesystem::path& path, int num_classes = 0) {
    std::string ext = to_lower(path.extension().string());
    if (ext == ".csv") return load_dataset_csv(path, num_classes);
    return load_dataset_jsonl(path, num_classes);
}

// ─── Splitting ───────────────────────────────────────────────────────

struct SplitRatios {
    double train = 0.7;
    double val = 0.1;
    double test = 0.2;

    void validate() const {
        if (train < 0 || val < 0 || test < 0 ||
            std::fabs(train + val + test - 1.0) > 1e-9)
            throw Error(Errc::config, "split ratios must be non-negative and sum to 1");
    }
};

struct DatasetSplit {
    Dataset train;
    Dataset val;
    Dataset test;
};

namespace detail {

// Largest-remainder allocation with per-class capacity, so stratified
// splits land exactly on the global sizes.
inline std::vector<int> allocate_by_remainder(const std::vector<double>& ideal,
                                              const std::vector<int>& caps, int total) {
    std::size_t n = ideal.size();
    std::vector<int> alloc(n, 0);
    std::vector<std::pair<double, std::size_t>> order;
    int assigned = 0;
    for (std::size_t i = 0; i < n; ++i) {
        alloc[i] = std::min(static_cast<int>(std::floor(ideal[i])), caps[i]);
        assigned += alloc[i];
        order.emplace_back(ideal[i] - std::floor(ideal[i]), i);
    }
    std::sort(order.begin(), order.end(), [](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first > b.first;
        return a.second < b.second;
    });
    while (assigned < total) {
        bool progressed = false;
        for (const auto& [frac, i] : order) {
            if (assigned >= total) break;
            if (alloc[i] < caps[i]) {
                ++alloc[i];
                ++assigned;
                progressed = true;
            }
        }
        if (!progressed) throw Error(Errc::runtime, "split allocation cannot reach the target");
    }
    return alloc;
}

}  // namespace detail

// Seeded, reproducible split. Global sizes follow a floor(train) /
// floor(test) / remainder-to-val convention. Stratified by label when
// every class has at least 3 items; otherwise a plain split, logged.
inline DatasetSplit split_dataset(const Dataset& dataset, const SplitRatios& ratios,
                                  std::uint64_t seed) {
    ratios.validate();
    const int n = static_cast<int>(dataset.items.size());
    if (n < 10)
        throw Error(Errc::invalid_input,
                    "dataset too small to split (" + std::to_string(n) + " items, need >= 10)");

    const int n_train = static_cast<int>(std::floor(ratios.train * n));
    const int n_test = static_cast<int>(std::floor(ratios.test * n));
    const int n_val = n - n_train - n_test;

    std::vector<ResponseItem> shuffled = dataset.items;
    std::sort(shuffled.begin(), shuffled.end(),
              [](const ResponseItem& a, const ResponseItem& b) { return a.id < b.id; });
    Rng rng(Rng::derive_seed(seed, "split"));
    rng.shuffle(shuffled);

    bool stratify = dataset.fully_labeled();
    std::map<int, std::vector<ResponseItem>> by_class;
    if (stratify) {
        for (const auto& item : shuffled) by_class[*item.label].push_back(item);
        for (const auto& [label, items] : by_class) {
            if (static_cast<int>(items.size()) < 3) {
                stratify = false;
                log_info("class " + std::to_string(label) +
                         " has fewer than 3 items; using a plain (non-stratified) split");
                break;
            }
        }
    }

    DatasetSplit split;
    split.train.scale = split.val.scale = split.test.scale = dataset.scale;
    std::string prov = dataset.provenance + " seed=" + std::to_string(seed);
    split.train.provenance = prov + " (train)";
    split.val.provenance = prov + " (val)";
    split.test.provenance = prov + " (test)";

    if (!stratify) {
        for (int i = 0; i < n; ++i) {
            if (i < n_train)
                split.train.items.push_back(shuffled[static_cast<std::size_t>(i)]);
            else if (i < n_train + n_val)
                split.val.items.push_back(shuffled[static_cast<std::size_t>(i)]);
            else
                split.test.items.push_back(shuffled[static_cast<std::size_t>(i)]);
        }
        return split;
    }

    std::vector<int> class_labels;
    std::vector<int> class_sizes;
    for (const auto& [label, items] : by_class) {
        class_labels.push_back(label);
        class_sizes.push_back(static_cast<int>(items.size()));
    }
    std::vector<double> ideal_train, ideal_test;
    for (int size : class_sizes) {
        ideal_train.push_back(static_cast<double>(size) * n_train / n);
        ideal_test.push_back(static_cast<double>(size) * n_test / n);
    }
    auto train_alloc = detail::allocate_by_remainder(ideal_train, class_sizes, n_train);
    std::vector<int> test_caps;
    for (std::size_t i = 0; i < class_sizes.size(); ++i)
        test_caps.push_back(class_sizes[i] - train_alloc[i]);
    auto test_alloc = detail::allocate_by_remainder(ideal_test, test_caps, n_test);

    for (std::size_t ci = 0; ci < class_labels.size(); ++ci) {
        const auto& items = by_class[class_labels[ci]];
        int t = train_alloc[ci];
        int e = test_alloc[ci];
        for (std::size_t i = 0; i < items.size(); ++i) {
            if (static_cast<int>(i) < t)
                split.train.items.push_back(items[i]);
            else if (static_cast<int>(i) < t + e)
                split.test.items.push_back(items[i]);
            else
                split.val.items.push_back(items[i]);
        }
    }
    return split;
}

inline void save_dataset_jsonl(const Dataset& dataset, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw Error(Errc::runtime, "cannot write dataset: " + path.string());
    for (const auto& item : dataset.items) {
        nlohmann::json record{{"id", item.id}, {"text", item.text}};
        if (item.label) record["label"] = *item.label;
        out << record.dump() << "\n";
    }
}

}  // namespace caro
