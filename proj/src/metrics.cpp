#include "emmpd/metrics.hpp"

#include <algorithm>
#include <numeric>
#include <sstream>

#include "emmpd/errors.hpp"

namespace emmpd {

double roc_auc_binary(const std::vector<double>& scores, const std::vector<int>& labels) {
    int pos = 0, neg = 0;
    for (int l : labels) (l ? pos : neg)++;
    if (pos == 0 || neg == 0)
        throw NumericError("roc_auc: needs at least one positive and one negative");
    // Mann-Whitney via sorting with mid-ranks on ties.
    const int n = static_cast<int>(scores.size());
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](int a, int b) { return scores[a] < scores[b]; });
    double rank_sum_pos = 0.0;
    int i = 0;
    while (i < n) {
        int j = i;
        while (j < n && scores[order[j]] == scores[order[i]]) ++j;
        const double mid_rank = (i + 1 + j) / 2.0;  // average of ranks i+1 .. j
        for (int q = i; q < j; ++q)
            if (labels[order[q]]) rank_sum_pos += mid_rank;
        i = j;
    }
    return (rank_sum_pos - pos * (pos + 1) / 2.0) / (static_cast<double>(pos) * neg);
}

double pr_auc_binary(const std::vector<double>& scores, const std::vector<int>& labels) {
    int pos = 0;
    for (int l : labels) pos += l;
    if (pos == 0) throw NumericError("pr_auc: needs at least one positive");
    const int n = static_cast<int>(scores.size());
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int a, int b) {
        if (scores[a] != scores[b]) return scores[a] > scores[b];
        return a < b;
    });
    double ap = 0.0;
    int seen_pos = 0;
    for (int rank = 0; rank < n; ++rank) {
        if (labels[order[rank]]) {
            ++seen_pos;
            ap += static_cast<double>(seen_pos) / (rank + 1);
        }
    }
    return ap / pos;
}

MetricsReport compute_metrics(const std::vector<std::vector<double>>& scores,
                              const std::vector<std::vector<int>>& labels,
                              TaskMode task_mode) {
    if (scores.empty() || scores.size() != labels.size())
        throw NumericError("compute_metrics: empty or mismatched inputs");
    const int n = static_cast<int>(scores.size());
    const int c = static_cast<int>(scores[0].size());

    MetricsReport report;
    report.samples = n;
    report.per_class.resize(c);

    // Hard predictions.
    std::vector<std::vector<int>> pred(n, std::vector<int>(c, 0));
    if (task_mode == TaskMode::Multilabel) {
        for (int i = 0; i < n; ++i)
            for (int k = 0; k < c; ++k) pred[i][k] = scores[i][k] >= 0.5 ? 1 : 0;
    } else {
        for (int i = 0; i < n; ++i) {
            int best = 0;
            for (int k = 1; k < c; ++k)
                if (scores[i][k] > scores[i][best]) best = k;
            pred[i][best] = 1;
        }
    }

    int exact = 0;
    for (int i = 0; i < n; ++i)
        if (pred[i] == labels[i]) ++exact;
    report.acc = static_cast<double>(exact) / n;

    double f1_sum = 0.0, roc_sum = 0.0, pr_sum = 0.0;
    int roc_classes = 0, pr_classes = 0;
    for (int k = 0; k < c; ++k) {
        ClassMetrics& cm = report.per_class[k];
        std::vector<double> col_scores(n);
        std::vector<int> col_labels(n);
        for (int i = 0; i < n; ++i) {
            col_scores[i] = scores[i][k];
            col_labels[i] = labels[i][k];
            if (labels[i][k] && pred[i][k]) ++cm.tp;
            if (!labels[i][k] && pred[i][k]) ++cm.fp;
            if (labels[i][k] && !pred[i][k]) ++cm.fn;
            if (!labels[i][k] && !pred[i][k]) ++cm.tn;
        }
        const double denom = 2.0 * cm.tp + cm.fp + cm.fn;
        cm.f1 = denom > 0.0 ? 2.0 * cm.tp / denom : 0.0;
        f1_sum += cm.f1;
        const int pos = cm.tp + cm.fn;
        if (pos > 0 && pos < n) {
            cm.roc_auc = roc_auc_binary(col_scores, col_labels);
            roc_sum += cm.roc_auc;
            ++roc_classes;
        } else {
            cm.degenerate = true;
        }
        if (pos > 0) {
            cm.pr_auc = pr_auc_binary(col_scores, col_labels);
            pr_sum += cm.pr_auc;
            ++pr_classes;
        }
    }
    report.f1 = f1_sum / c;
    report.roc_auc = roc_classes > 0 ? roc_sum / roc_classes : 0.0;
    report.pr_auc = pr_classes > 0 ? pr_sum / pr_classes : 0.0;
    return report;
}

std::string MetricsReport::to_text(const std::vector<std::string>& class_names) const {
    std::ostringstream os;
    os << "samples " << samples << "\n";
    os << "acc     " << acc << "\n";
    os << "f1      " << f1 << "\n";
    os << "roc_auc " << roc_auc << "\n";
    os << "pr_auc  " << pr_auc << "\n";
    for (size_t k = 0; k < per_class.size(); ++k) {
        const ClassMetrics& cm = per_class[k];
        os << "class " << (k < class_names.size() ? class_names[k] : std::to_string(k))
           << ": f1=" << cm.f1 << " roc_auc=" << cm.roc_auc << " pr_auc=" << cm.pr_auc
           << " tp=" << cm.tp << " fp=" << cm.fp << " tn=" << cm.tn << " fn=" << cm.fn
           << (cm.degenerate ? " (degenerate, excluded from macro roc)" : "") << "\n";
    }
    return os.str();
}

std::string MetricsReport::to_kv() const {
    std::ostringstream os;
    os << "samples " << samples << "\n"
       << "acc " << acc << "\n"
       << "f1 " << f1 << "\n"
       << "roc_auc " << roc_auc << "\n"
       << "pr_auc " << pr_auc << "\n";
    return os.str();
}

}  // namespace emmpd
