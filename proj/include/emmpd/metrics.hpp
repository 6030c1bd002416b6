#pragma once

#include <string>
#include <vector>

#include "emmpd/bag.hpp"

namespace emmpd {

struct ClassMetrics {
    double roc_auc = 0.0;
    double pr_auc = 0.0;
    double f1 = 0.0;
    int tp = 0, fp = 0, tn = 0, fn = 0;
    bool degenerate = false;  // excluded from macro averages
};

struct MetricsReport {
    double acc = 0.0;      // subset accuracy (multilabel) / standard (multiclass)
    double f1 = 0.0;       // macro
    double roc_auc = 0.0;  // macro over non-degenerate classes
    double pr_auc = 0.0;
    int samples = 0;
    std::vector<ClassMetrics> per_class;
    std::string to_text(const std::vector<std::string>& class_names = {}) const;
    std::string to_kv() const;
};

// Mann-Whitney with ties counted half. Requires at least one positive and
// one negative; throws NumericError otherwise.
double roc_auc_binary(const std::vector<double>& scores, const std::vector<int>& labels);

// Average precision, step interpolation over the descending-score ranking
// (ties broken by lower index). Requires at least one positive.
double pr_auc_binary(const std::vector<double>& scores, const std::vector<int>& labels);

// scores: one row per sample, C columns. labels likewise (multilabel {0,1};
// multiclass one-hot).
MetricsReport compute_metrics(const std::vector<std::vector<double>>& scores,
                              const std::vector<std::vector<int>>& labels,
                              TaskMode task_mode);

}  // namespace emmpd
