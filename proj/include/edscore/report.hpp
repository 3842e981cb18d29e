// SPDX-License-Identifier: Apache-2.0
//
// Result serialization: per-item predictions files, audit logs, and the
// comparison report (per-item rows plus an aggregate block with the paired
// t-test and one regression block per model/feature).

#pragma once

#include <map>
#include <string>
#include <vector>

#include "edscore/common.hpp"
#include "edscore/finetune.hpp"
#include "edscore/stats.hpp"

namespace edscore {

// ---------------------------------------------------------------------------
// predictions: record_id \t rotation \t true \t predicted
// ---------------------------------------------------------------------------

struct PredictionsFile {
    std::string item_id;
    int num_labels = 0;
    std::string model_tag;
    std::string config_hash;
    double stored_qwk = 0.0;
    bool has_stored_qwk = false;
    std::vector<Prediction> predictions;
};

inline void save_predictions(const std::filesystem::path& path, const std::string& item_id,
                             int num_labels, const std::string& model_tag,
                             const std::string& hash, const FinetuneResult& result) {
    std::string out;
    out += "# predictions item=" + item_id + " labels=" + std::to_string(num_labels) +
           " model=" + model_tag + " config_hash=" + hash +
           " qwk=" + format_double(result.qwk) + "\n";
    out += "# record_id\trotation\ttrue\tpredicted\n";
    for (const auto& p : result.predictions)
        out += p.record_uid + "\t" + std::to_string(p.rotation) + "\t" +
               std::to_string(p.true_label) + "\t" + std::to_string(p.predicted) + "\n";
    write_text_file(path, out);
}

inline PredictionsFile load_predictions(const std::filesystem::path& path) {
    PredictionsFile pf;
    const auto lines = read_lines(path);
    for (std::size_t i = 0; i < lines.size(); ++i) {
        const std::string& line = lines[i];
        if (line.empty()) continue;
        if (line[0] == '#') {
            for (const auto& field : split_whitespace(line)) {
                if (field.rfind("item=", 0) == 0) pf.item_id = field.substr(5);
                if (field.rfind("labels=", 0) == 0)
                    pf.num_labels = static_cast<int>(parse_long(field.substr(7), "labels"));
                if (field.rfind("model=", 0) == 0) pf.model_tag = field.substr(6);
                if (field.rfind("config_hash=", 0) == 0) pf.config_hash = field.substr(12);
                if (field.rfind("qwk=", 0) == 0) {
                    pf.stored_qwk = parse_double(field.substr(4), "qwk");
                    pf.has_stored_qwk = true;
                }
            }
            continue;
        }
        const auto fields = split_on(line, '\t');
        if (fields.size() != 4)
            throw DataError(path.string() + ":" + std::to_string(i + 1) +
                            ": expected 4 fields in predictions row");
        Prediction p;
        p.record_uid = fields[0];
        p.rotation = static_cast<int>(parse_long(fields[1], "rotation"));
        p.true_label = static_cast<int>(parse_long(fields[2], "true"));
        p.predicted = static_cast<int>(parse_long(fields[3], "predicted"));
        pf.predictions.push_back(std::move(p));
    }
    if (pf.num_labels < 2) throw DataError("predictions file missing labels meta: " + path.string());
    return pf;
}

inline double pooled_qwk(const std::vector<Prediction>& predictions, int num_labels) {
    std::vector<int> t, p;
    for (const auto& pred : predictions) {
        t.push_back(pred.true_label);
        p.push_back(pred.predicted);
    }
    return qwk(t, p, num_labels);
}

// ---------------------------------------------------------------------------
// audit log: rotation \t kind \t record_id \t extra
// ---------------------------------------------------------------------------

inline void save_audit(const std::filesystem::path& path, const std::string& item_id,
                       const std::vector<AuditEntry>& audit) {
    std::string out = "# audit item=" + item_id + "\n# rotation\tkind\trecord_id\tfor_record\n";
    for (const auto& e : audit)
        out += std::to_string(e.rotation) + "\t" + e.kind + "\t" + e.uid + "\t" + e.extra + "\n";
    write_text_file(path, out);
}

inline std::vector<AuditEntry> load_audit(const std::filesystem::path& path) {
    std::vector<AuditEntry> audit;
    for (const auto& line : read_lines(path)) {
        if (line.empty() || line[0] == '#') continue;
        const auto fields = split_on(line, '\t');
        if (fields.size() != 4) throw DataError("malformed audit row: " + line);
        AuditEntry e;
        e.rotation = static_cast<int>(parse_long(fields[0], "rotation"));
        e.kind = fields[1];
        e.uid = fields[2];
        e.extra = fields[3];
        audit.push_back(std::move(e));
    }
    return audit;
}

// zero test-fold overlap with training data or in-context examples, per rotation
inline std::vector<std::string> audit_leakage(const std::vector<AuditEntry>& audit) {
    std::vector<std::string> violations;
    std::map<int, std::vector<const AuditEntry*>> by_rotation;
    for (const auto& e : audit) by_rotation[e.rotation].push_back(&e);
    for (const auto& [rotation, entries] : by_rotation) {
        std::set<std::string> test_uids, train_uids, ctx_uids;
        for (const auto* e : entries) {
            if (e->kind == "test") test_uids.insert(e->uid);
            if (e->kind == "train") train_uids.insert(e->uid);
            if (e->kind == "context") ctx_uids.insert(e->uid);
        }
        for (const auto& uid : test_uids) {
            if (train_uids.count(uid))
                violations.push_back("rotation " + std::to_string(rotation) + ": test record " +
                                     uid + " in training data");
            if (ctx_uids.count(uid))
                violations.push_back("rotation " + std::to_string(rotation) + ": test record " +
                                     uid + " used as context example");
        }
    }
    return violations;
}

// ---------------------------------------------------------------------------
// comparison report
// ---------------------------------------------------------------------------

struct ReportRow {
    std::string item_id;
    long n_train = 0;  // train+validation records of rotation 0
    long n_test = 0;   // test fold of rotation 0
    int num_labels = 0;
    double qwk_baseline = 0.0;
    double qwk_adapted = 0.0;
    double avg_response_length = 0.0;
    double scientific_word_rate = 0.0;
};

struct MetricReport {
    std::vector<ReportRow> rows;
    double mean_qwk_baseline = 0.0;
    double mean_qwk_adapted = 0.0;
    bool has_t_test = false;       // needs >= 2 items
    bool has_regressions = false;  // needs >= 3 items
    PairedTestResult t_test;
    // keyed by "<model>/<feature>"
    std::map<std::string, RegressionResult> regressions;
};

inline MetricReport build_report(std::vector<ReportRow> rows) {
    if (rows.empty()) throw DataError("report: no item rows");
    MetricReport report;
    report.rows = std::move(rows);

    std::vector<double> qwk_b, qwk_a, lengths, sci;
    for (const auto& row : report.rows) {
        qwk_b.push_back(row.qwk_baseline);
        qwk_a.push_back(row.qwk_adapted);
        lengths.push_back(row.avg_response_length);
        sci.push_back(row.scientific_word_rate);
    }
    for (double v : qwk_b) report.mean_qwk_baseline += v;
    for (double v : qwk_a) report.mean_qwk_adapted += v;
    report.mean_qwk_baseline /= static_cast<double>(qwk_b.size());
    report.mean_qwk_adapted /= static_cast<double>(qwk_a.size());
    if (qwk_b.size() >= 2) {
        report.t_test = paired_t_test(qwk_a, qwk_b);
        report.has_t_test = true;
    }
    // the feature regressions additionally require feature variance across items
    if (qwk_b.size() >= 3) {
        try {
            report.regressions["baseline/avg_response_length"] =
                simple_regression(lengths, qwk_b);
            report.regressions["adapted/avg_response_length"] = simple_regression(lengths, qwk_a);
            report.regressions["baseline/scientific_word_rate"] = simple_regression(sci, qwk_b);
            report.regressions["adapted/scientific_word_rate"] = simple_regression(sci, qwk_a);
            report.has_regressions = true;
        } catch (const NumericError&) {
            report.regressions.clear();
        }
    }
    return report;
}

inline std::string render_report(const MetricReport& report, const std::string& hash) {
    std::string out;
    out += "# comparison report\n";
    out += "# config_hash=" + hash + "\n";
    out += "item_id\tn_train\tn_test\tlabels\tqwk_baseline\tqwk_adapted\n";
    for (const auto& row : report.rows)
        out += row.item_id + "\t" + std::to_string(row.n_train) + "\t" +
               std::to_string(row.n_test) + "\t" + std::to_string(row.num_labels) + "\t" +
               format_double(row.qwk_baseline) + "\t" + format_double(row.qwk_adapted) + "\n";
    out += "# aggregate\n";
    out += "mean_qwk_baseline\t" + format_double(report.mean_qwk_baseline) + "\n";
    out += "mean_qwk_adapted\t" + format_double(report.mean_qwk_adapted) + "\n";
    if (report.has_t_test) {
        out += "paired_t\t" + format_double(report.t_test.t) + "\n";
        out += "df\t" + std::to_string(report.t_test.df) + "\n";
        out += "p_value\t" + format_double(report.t_test.p_value) + "\n";
        out += "mean_diff\t" + format_double(report.t_test.mean_diff) + "\n";
        out += "sd_diff\t" + format_double(report.t_test.sd_diff) + "\n";
    } else {
        out += "# paired t-test omitted: needs at least 2 items\n";
    }
    for (const auto& [key, reg] : report.regressions) {
        out += "# regression " + key + "\n";
        out += "slope\t" + format_double(reg.slope) + "\n";
        out += "intercept\t" + format_double(reg.intercept) + "\n";
        out += "r\t" + format_double(reg.r) + "\n";
        out += "r_squared\t" + format_double(reg.r_squared) + "\n";
        out += "F\t" + format_double(reg.f_stat) + "\n";
        out += "df1\t1\n";
        out += "df2\t" + std::to_string(reg.df2) + "\n";
        out += "p_value\t" + format_double(reg.p_value) + "\n";
    }
    // per-item covariates, so the regression blocks are recomputable from the
    // report itself
    out += "# features item_id\tavg_response_length\tscientific_word_rate\n";
    for (const auto& row : report.rows)
        out += "feature\t" + row.item_id + "\t" + format_double(row.avg_response_length) + "\t" +
               format_double(row.scientific_word_rate) + "\n";
    return out;
}

}  // namespace edscore
