#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "calibration.hpp"
#include "detection.hpp"
#include "embedding_io.hpp"
#include "error.hpp"

namespace ood {

/// Column order of the corruption tables.
inline constexpr std::array<std::string_view, 10> kCanonicalOodTypes = {
    "rain", "snow", "night", "bright", "fog", "contrast", "defocus", "gauss", "glass", "motion"};

/// Canonical types first (in table order), any others after them alphabetically.
inline std::vector<std::string> order_ood_types(const std::set<std::string>& types) {
    std::vector<std::string> out;
    for (auto t : kCanonicalOodTypes) {
        if (types.count(std::string(t))) out.emplace_back(t);
    }
    for (const auto& t : types) {
        if (std::find(kCanonicalOodTypes.begin(), kCanonicalOodTypes.end(), t) ==
            kCanonicalOodTypes.end()) {
            out.push_back(t);
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Test mixes

struct MixItem {
    Role label = Role::Id;
    std::size_t row = 0;  // row within the id or ood source

    friend bool operator==(const MixItem&, const MixItem&) = default;
};

/// m = min(n_id, n_ood) rows of each class drawn without replacement (seeded shuffle,
/// id first then ood from the same generator), interleaved id, ood, id, ood, ...
inline std::vector<MixItem> plan_test_mix(std::size_t n_id, std::size_t n_ood, std::uint64_t seed) {
    if (n_id == 0 || n_ood == 0) {
        throw Error(ErrorKind::InsufficientData, "test mix needs nonempty id and ood sets");
    }
    SplitMix64 rng(seed);
    const auto id_rows = shuffled_indices(n_id, rng);
    const auto ood_rows = shuffled_indices(n_ood, rng);
    const std::size_t m = std::min(n_id, n_ood);
    std::vector<MixItem> plan;
    plan.reserve(2 * m);
    for (std::size_t i = 0; i < m; ++i) {
        plan.push_back({Role::Id, id_rows[i]});
        plan.push_back({Role::Ood, ood_rows[i]});
    }
    return plan;
}

/// Rows of `id`/`ood` gathered per `plan`.
inline EmbeddingSet apply_mix(const EmbeddingSet& id, const EmbeddingSet& ood,
                              std::span<const MixItem> plan) {
    if (id.dim() != ood.dim()) {
        throw Error(ErrorKind::Dimension, "id set has dim " + std::to_string(id.dim()) +
                                              " but ood set has dim " + std::to_string(ood.dim()));
    }
    std::vector<float> flat;
    flat.reserve(plan.size() * id.dim());
    for (const auto& item : plan) {
        auto r = item.label == Role::Id ? id.row(item.row) : ood.row(item.row);
        flat.insert(flat.end(), r.begin(), r.end());
    }
    return EmbeddingSet(plan.size(), id.dim(), std::move(flat), id.meta());
}

struct TestMix {
    EmbeddingSet samples;
    std::vector<Role> labels;
};

inline TestMix build_test_mix(const EmbeddingSet& id, const EmbeddingSet& ood, std::uint64_t seed) {
    if (id.dim() != ood.dim()) {
        throw Error(ErrorKind::Dimension, "id set has dim " + std::to_string(id.dim()) +
                                              " but ood set has dim " + std::to_string(ood.dim()));
    }
    const auto plan = plan_test_mix(id.count(), ood.count(), seed);
    TestMix mix{apply_mix(id, ood, plan), {}};
    mix.labels.reserve(plan.size());
    for (const auto& item : plan) mix.labels.push_back(item.label);
    return mix;
}

// ---------------------------------------------------------------------------
// Metrics (positive class = ood)

struct ConfusionMatrix {
    std::size_t tp = 0;
    std::size_t fp = 0;
    std::size_t tn = 0;
    std::size_t fn = 0;

    std::size_t total() const { return tp + fp + tn + fn; }

    friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;
};

inline ConfusionMatrix confusion(std::span<const Role> labels, std::span<const Verdict> verdicts) {
    if (labels.size() != verdicts.size()) {
        throw Error(ErrorKind::Alignment, std::to_string(labels.size()) + " labels but " +
                                              std::to_string(verdicts.size()) + " verdicts");
    }
    ConfusionMatrix c;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const bool actual = labels[i] == Role::Ood;
        const bool flagged = verdicts[i] == Verdict::Ood;
        if (actual && flagged) ++c.tp;
        else if (!actual && flagged) ++c.fp;
        else if (!actual) ++c.tn;
        else ++c.fn;
    }
    return c;
}

inline constexpr double kUndefined = std::numeric_limits<double>::quiet_NaN();

/// 2tp / (2tp + fp + fn); NaN when the denominator is zero.
inline double f1(const ConfusionMatrix& c) {
    const std::size_t den = 2 * c.tp + c.fp + c.fn;
    return den == 0 ? kUndefined : 2.0 * static_cast<double>(c.tp) / static_cast<double>(den);
}

inline double accuracy(const ConfusionMatrix& c) {
    return c.total() == 0 ? kUndefined
                          : static_cast<double>(c.tp + c.tn) / static_cast<double>(c.total());
}

/// fp / (fp + tn); NaN without any actual negatives.
inline double fpr(const ConfusionMatrix& c) {
    const std::size_t den = c.fp + c.tn;
    return den == 0 ? kUndefined : static_cast<double>(c.fp) / static_cast<double>(den);
}

enum class Metric { F1, Accuracy, Fpr };

inline constexpr std::array<Metric, 3> kAllMetrics = {Metric::F1, Metric::Accuracy, Metric::Fpr};

inline std::string_view to_string(Metric m) {
    switch (m) {
        case Metric::F1: return "f1";
        case Metric::Accuracy: return "accuracy";
        case Metric::Fpr: return "fpr";
    }
    return "?";
}

inline double metric_value(Metric m, const ConfusionMatrix& c) {
    switch (m) {
        case Metric::F1: return f1(c);
        case Metric::Accuracy: return accuracy(c);
        case Metric::Fpr: return fpr(c);
    }
    return kUndefined;
}

struct RowStats {
    double mean = 0.0;
    double std = 0.0;
};

/// Mean and population standard deviation (divide by N).
inline RowStats aggregate_row(std::span<const double> values) {
    if (values.empty()) {
        throw Error(ErrorKind::InsufficientData, "aggregate of an empty row");
    }
    const double n = static_cast<double>(values.size());
    double mean = 0.0;
    for (double v : values) mean += v;
    mean /= n;
    double ss = 0.0;
    for (double v : values) ss += (v - mean) * (v - mean);
    return {mean, std::sqrt(ss / n)};
}

// ---------------------------------------------------------------------------
// Reports

struct ReportRow {
    std::string label;
    /// Metric value in percent per ood type. A missing key is an absent cell;
    /// NaN is an undefined metric. Both are left out of mean/std.
    std::map<std::string, double> per_type;
    double mean = kUndefined;
    double std = kUndefined;
};

struct EvaluationReport {
    Metric metric = Metric::F1;
    std::vector<std::string> columns;
    std::vector<ReportRow> rows;
};

/// Fills mean/std from the defined cells of `row`.
inline void finalize_row(ReportRow& row) {
    std::vector<double> defined;
    for (const auto& [type, v] : row.per_type) {
        if (std::isfinite(v)) defined.push_back(v);
    }
    if (defined.empty()) {
        row.mean = row.std = kUndefined;
        return;
    }
    const auto stats = aggregate_row(defined);
    row.mean = stats.mean;
    row.std = stats.std;
}

enum class ReportFormat { Csv, Markdown };

namespace detail {

inline std::string csv_field(std::string_view s) {
    if (s.find_first_of(",\"\n\r") == std::string_view::npos) return std::string(s);
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    out += '"';
    return out;
}

inline std::string csv_number(double v) {
    if (std::isnan(v)) return "nan";
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline std::string md_number(double v) {
    if (std::isnan(v)) return "n/a";
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return buf;
}

inline std::string md_escape(std::string_view s) {
    std::string out;
    for (char c : s) {
        if (c == '|') out += '\\';
        out += c;
    }
    return out;
}

/// Splits one CSV record honoring double-quoted fields.
inline std::vector<std::string> split_csv_line(std::string_view line) {
    std::vector<std::string> fields(1);
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
                fields.back() += '"';
                ++i;
            } else if (c == '"') {
                quoted = false;
            } else {
                fields.back() += c;
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            fields.emplace_back();
        } else {
            fields.back() += c;
        }
    }
    if (quoted) throw Error(ErrorKind::Format, "unterminated quote in CSV record");
    return fields;
}

inline double parse_csv_number(const std::string& s) {
    if (s == "nan") return kUndefined;
    char* end = nullptr;
    const double v = std::strtod(s.c_str(), &end);
    if (s.empty() || end != s.c_str() + s.size()) {
        throw Error(ErrorKind::Format, "bad number '" + s + "' in report CSV");
    }
    return v;
}

}  // namespace detail

/// CSV: full precision, absent cells empty, undefined as `nan`.
/// Markdown: two decimals, absent as `-`, undefined as `n/a`.
inline std::string render_report(const EvaluationReport& report, ReportFormat format) {
    std::string s;
    if (format == ReportFormat::Csv) {
        s += "label";
        for (const auto& c : report.columns) s += "," + detail::csv_field(c);
        s += ",mean,std\n";
        for (const auto& row : report.rows) {
            s += detail::csv_field(row.label);
            for (const auto& c : report.columns) {
                s += ',';
                if (auto it = row.per_type.find(c); it != row.per_type.end()) {
                    s += detail::csv_number(it->second);
                }
            }
            s += "," + detail::csv_number(row.mean) + "," + detail::csv_number(row.std) + "\n";
        }
        return s;
    }
    s += "| label |";
    for (const auto& c : report.columns) s += " " + detail::md_escape(c) + " |";
    s += " mean | std |\n|---|";
    for (std::size_t i = 0; i < report.columns.size() + 2; ++i) s += "---:|";
    s += "\n";
    for (const auto& row : report.rows) {
        s += "| " + detail::md_escape(row.label) + " |";
        for (const auto& c : report.columns) {
            auto it = row.per_type.find(c);
            s += " " + (it == row.per_type.end() ? std::string("-") : detail::md_number(it->second)) +
                 " |";
        }
        s += " " + detail::md_number(row.mean) + " | " + detail::md_number(row.std) + " |\n";
    }
    return s;
}

/// Inverse of the CSV rendering. Mean and std are read as written, not recomputed.
inline EvaluationReport parse_report_csv(std::string_view text, Metric metric) {
    EvaluationReport report;
    report.metric = metric;
    std::vector<std::string_view> lines;
    std::size_t start = 0;
    // Quoted fields never contain raw newlines in rendered reports, so split on '\n'.
    while (start < text.size()) {
        auto end = text.find('\n', start);
        if (end == std::string_view::npos) end = text.size();
        auto line = text.substr(start, end - start);
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        lines.push_back(line);
        start = end + 1;
    }
    if (lines.empty()) throw Error(ErrorKind::Format, "report CSV has no header");
    const auto header = detail::split_csv_line(lines[0]);
    if (header.size() < 3 || header.front() != "label" || header[header.size() - 2] != "mean" ||
        header.back() != "std") {
        throw Error(ErrorKind::Format, "report CSV header must be label,...,mean,std");
    }
    report.columns.assign(header.begin() + 1, header.end() - 2);
    for (std::size_t li = 1; li < lines.size(); ++li) {
        if (lines[li].empty()) continue;
        const auto fields = detail::split_csv_line(lines[li]);
        if (fields.size() != header.size()) {
            throw Error(ErrorKind::Format, "report CSV line " + std::to_string(li + 1) + " has " +
                                               std::to_string(fields.size()) + " fields, expected " +
                                               std::to_string(header.size()));
        }
        ReportRow row;
        row.label = fields[0];
        for (std::size_t c = 0; c < report.columns.size(); ++c) {
            if (!fields[c + 1].empty()) {
                row.per_type[report.columns[c]] = detail::parse_csv_number(fields[c + 1]);
            }
        }
        row.mean = detail::parse_csv_number(fields[fields.size() - 2]);
        row.std = detail::parse_csv_number(fields.back());
        report.rows.push_back(std::move(row));
    }
    return report;
}

// ---------------------------------------------------------------------------
// Grid evaluation

/// Encoder name identifying CLIP image embeddings in a manifest (source of language features).
inline constexpr std::string_view kClipImageEncoder = "clip-image";

struct NamedModel {
    std::string label;
    DetectorModel model;
};

struct GridOptions {
    std::uint64_t seed = 0;
    unsigned threads = 1;
};

struct GridResult {
    std::map<Metric, EvaluationReport> reports;
    std::vector<std::string> warnings;
};

namespace detail {

inline EmbeddingSet concat_sets(const std::vector<const EmbeddingSet*>& sets) {
    std::vector<float> flat;
    std::size_t count = 0;
    const std::size_t dim = sets.front()->dim();
    for (const auto* s : sets) {
        if (s->dim() != dim) {
            throw Error(ErrorKind::Dimension, "manifest entries of one kind have different dims");
        }
        flat.insert(flat.end(), s->values().begin(), s->values().end());
        count += s->count();
    }
    return EmbeddingSet(count, dim, std::move(flat), sets.front()->meta());
}

class ManifestData {
public:
    explicit ManifestData(const DatasetManifest& manifest) : manifest_(manifest) {}

    /// Concatenation of matching entries in manifest order. nullopt if there are none or
    /// any of them is missing on disk (each missing file is recorded in `warnings`).
    std::optional<EmbeddingSet> gather(Role role, const std::string& ood_type,
                                       const std::string& encoder,
                                       std::vector<std::string>& warnings) {
        std::vector<const EmbeddingSet*> sets;
        bool missing = false;
        for (const auto& e : manifest_.entries) {
            if (e.role == role && e.encoder == encoder && (role == Role::Id || e.ood_type == ood_type)) {
                const auto path = manifest_.resolve(e.path);
                if (!std::filesystem::exists(path)) {
                    if (reported_missing_.insert(e.path).second) {
                        warnings.push_back("missing embedding file '" + path.string() + "'");
                    }
                    missing = true;
                    continue;
                }
                sets.push_back(&load(e.path));
            }
        }
        if (sets.empty() || missing) return std::nullopt;
        return concat_sets(sets);
    }

    const PromptBank& prompts() {
        if (!prompts_) {
            PromptBank bank;
            if (!manifest_.prompt_files.normal.empty()) bank.normal = load(manifest_.prompt_files.normal);
            if (!manifest_.prompt_files.anomalous.empty()) {
                bank.anomalous = load(manifest_.prompt_files.anomalous);
            }
            prompts_ = std::move(bank);
        }
        return *prompts_;
    }

private:
    const EmbeddingSet& load(const std::string& path) {
        auto it = cache_.find(path);
        if (it == cache_.end()) {
            it = cache_.emplace(path, read_embedding_file(manifest_.resolve(path))).first;
        }
        return it->second;
    }

    const DatasetManifest& manifest_;
    std::map<std::string, EmbeddingSet> cache_;
    std::set<std::string> reported_missing_;
    std::optional<PromptBank> prompts_;
};

}  // namespace detail

/// For every (model, ood type) pair: 1:1 mix of the manifest's id data against that ood
/// type, detection, confusion counts, and each metric in percent.
///
/// A model reads its latents from entries whose encoder equals its provenance encoder and
/// its CLIP image embeddings from `clip-image` entries. Cells without matching files, or
/// whose files are missing on disk, are left absent and reported in `warnings`.
inline GridResult evaluate_grid(const DatasetManifest& manifest, std::span<const NamedModel> models,
                                const GridOptions& opt = {}) {
    std::set<std::string> types;
    for (const auto& e : manifest.entries) {
        if (e.role == Role::Ood) types.insert(e.ood_type);
    }
    GridResult result;
    for (Metric m : kAllMetrics) {
        result.reports[m] = EvaluationReport{m, order_ood_types(types), {}};
    }
    detail::ManifestData data(manifest);
    const std::string clip(kClipImageEncoder);

    for (const auto& named : models) {
        const auto& model = named.model;
        const bool need_v = uses(model.recipe, TermKind::V);
        const bool need_q = uses(model.recipe, TermKind::Pi) || uses(model.recipe, TermKind::PiBar);
        const std::string& v_encoder = model.provenance.encoder;

        std::map<Metric, ReportRow> rows;
        for (Metric m : kAllMetrics) rows[m].label = named.label;

        std::optional<EmbeddingSet> id_v, id_q;
        if (need_v) id_v = data.gather(Role::Id, "", v_encoder, result.warnings);
        if (need_q) id_q = data.gather(Role::Id, "", clip, result.warnings);
        const bool id_ok = (!need_v || id_v) && (!need_q || id_q);
        if (!id_ok) {
            result.warnings.push_back(named.label + ": manifest has no id embeddings for encoder '" +
                                      (need_v && !id_v ? v_encoder : clip) + "'; row left empty");
        }
        const PromptBank* prompts = need_q ? &data.prompts() : nullptr;

        for (const auto& type : result.reports.begin()->second.columns) {
            if (!id_ok) break;
            std::optional<EmbeddingSet> ood_v, ood_q;
            if (need_v) ood_v = data.gather(Role::Ood, type, v_encoder, result.warnings);
            if (need_q) ood_q = data.gather(Role::Ood, type, clip, result.warnings);
            if ((need_v && !ood_v) || (need_q && !ood_q)) {
                result.warnings.push_back(named.label + ": no '" + type + "' embeddings for encoder '" +
                                          (need_v && !ood_v ? v_encoder : clip) + "'; cell absent");
                continue;
            }
            const EmbeddingSet& id_ref = need_v ? *id_v : *id_q;
            const EmbeddingSet& ood_ref = need_v ? *ood_v : *ood_q;
            if (need_v && need_q &&
                (id_v->count() != id_q->count() || ood_v->count() != ood_q->count())) {
                throw Error(ErrorKind::Alignment, named.label + ": latent and CLIP image sets for '" +
                                                      type + "' have different row counts");
            }
            if (id_ref.empty() || ood_ref.empty()) {
                result.warnings.push_back(named.label + ": '" + type +
                                          "' mix has an empty side; cell absent");
                continue;
            }
            const auto plan = plan_test_mix(id_ref.count(), ood_ref.count(), opt.seed);
            std::optional<EmbeddingSet> mix_v, mix_q;
            if (need_v) mix_v = apply_mix(*id_v, *ood_v, plan);
            if (need_q) mix_q = apply_mix(*id_q, *ood_q, plan);
            const SampleSources src{mix_v ? &*mix_v : nullptr, mix_q ? &*mix_q : nullptr, prompts};
            const auto detections = batch_detect(model, src, BatchOptions{opt.threads});

            std::vector<Role> labels;
            std::vector<Verdict> verdicts;
            for (std::size_t i = 0; i < plan.size(); ++i) {
                labels.push_back(plan[i].label);
                verdicts.push_back(detections[i].verdict);
            }
            const auto cm = confusion(labels, verdicts);
            for (Metric m : kAllMetrics) rows[m].per_type[type] = 100.0 * metric_value(m, cm);
        }
        for (Metric m : kAllMetrics) {
            finalize_row(rows[m]);
            result.reports[m].rows.push_back(std::move(rows[m]));
        }
    }
    return result;
}

}  // namespace ood
