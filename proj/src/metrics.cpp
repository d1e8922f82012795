#include "cass/metrics.hpp"

#include "cass/errors.hpp"

#include <boost/math/distributions/students_t.hpp>

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <set>

namespace cass {
namespace {

struct Tally {
    int64_t tp = 0, fp = 0, fn = 0;
};

double mean_of(const std::vector<double>& v)
{
    return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

}  // namespace

MetricReport f1_macro(std::span<const int64_t> predictions, std::span<const int64_t> targets)
{
    if (predictions.size() != targets.size()) {
        throw ContractError("f1_macro: predictions and targets differ in length");
    }
    if (targets.empty()) {
        throw ContractError("f1_macro: empty input");
    }
    std::map<int64_t, Tally> tally;
    for (size_t i = 0; i < targets.size(); ++i) {
        tally[targets[i]];
        tally[predictions[i]];
        if (predictions[i] == targets[i]) {
            tally[targets[i]].tp += 1;
        } else {
            tally[predictions[i]].fp += 1;
            tally[targets[i]].fn += 1;
        }
    }
    MetricReport r;
    r.metric_name = "f1_macro";
    r.n_samples = static_cast<int64_t>(targets.size());
    for (const auto& [cls, t] : tally) {
        r.classes.push_back(cls);
        r.per_class.push_back(2.0 * static_cast<double>(t.tp) / static_cast<double>(2 * t.tp + t.fp + t.fn));
    }
    r.value = mean_of(r.per_class);
    return r;
}

MetricReport f1_macro_multilabel(const std::vector<std::vector<uint8_t>>& predictions,
                                 const std::vector<std::vector<uint8_t>>& targets)
{
    if (predictions.size() != targets.size()) {
        throw ContractError("f1_macro: predictions and targets differ in length");
    }
    if (targets.empty()) {
        throw ContractError("f1_macro: empty input");
    }
    const size_t classes = targets.front().size();
    std::vector<Tally> tally(classes);
    for (size_t i = 0; i < targets.size(); ++i) {
        if (targets[i].size() != classes || predictions[i].size() != classes) {
            throw ContractError("f1_macro: ragged multi-hot rows");
        }
        for (size_t c = 0; c < classes; ++c) {
            const bool p = predictions[i][c] != 0, y = targets[i][c] != 0;
            tally[c].tp += (p && y) ? 1 : 0;
            tally[c].fp += (p && !y) ? 1 : 0;
            tally[c].fn += (!p && y) ? 1 : 0;
        }
    }
    MetricReport r;
    r.metric_name = "f1_macro";
    r.n_samples = static_cast<int64_t>(targets.size());
    for (size_t c = 0; c < classes; ++c) {
        const auto& t = tally[c];
        const int64_t denom = 2 * t.tp + t.fp + t.fn;
        if (denom == 0) {
            r.excluded_classes.push_back(static_cast<int64_t>(c));
            continue;
        }
        r.classes.push_back(static_cast<int64_t>(c));
        r.per_class.push_back(2.0 * static_cast<double>(t.tp) / static_cast<double>(denom));
    }
    // Nothing positive anywhere: predictions agree with targets on every entry.
    r.value = r.per_class.empty() ? 1.0 : mean_of(r.per_class);
    return r;
}

MetricReport balanced_accuracy(std::span<const int64_t> predictions, std::span<const int64_t> targets)
{
    if (predictions.size() != targets.size()) {
        throw ContractError("balanced_accuracy: predictions and targets differ in length");
    }
    if (targets.empty()) {
        throw ContractError("balanced_accuracy: empty input");
    }
    std::map<int64_t, std::pair<int64_t, int64_t>> hits;  // class -> (tp, support)
    for (size_t i = 0; i < targets.size(); ++i) {
        auto& h = hits[targets[i]];
        h.second += 1;
        h.first += predictions[i] == targets[i] ? 1 : 0;
    }
    MetricReport r;
    r.metric_name = "balanced_accuracy";
    r.n_samples = static_cast<int64_t>(targets.size());
    for (const auto& [cls, h] : hits) {
        r.classes.push_back(cls);
        r.per_class.push_back(static_cast<double>(h.first) / static_cast<double>(h.second));
    }
    std::set<int64_t> flagged;
    for (auto p : predictions) {
        if (!hits.count(p)) flagged.insert(p);
    }
    r.excluded_classes.assign(flagged.begin(), flagged.end());
    r.value = mean_of(r.per_class);
    return r;
}

double student_t_quantile(double p, double dof)
{
    boost::math::students_t dist(dof);
    return boost::math::quantile(dist, p);
}

ConfidenceInterval ci95(std::span<const double> values)
{
    if (values.size() < 2) {
        throw ContractError("ci95: need at least two values");
    }
    const double n = static_cast<double>(values.size());
    const double mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
    if (std::all_of(values.begin(), values.end(), [&](double v) { return v == values.front(); })) {
        return {values.front(), 0.0};
    }
    double ss = 0.0;
    for (double v : values) {
        ss += (v - mean) * (v - mean);
    }
    const double sd = std::sqrt(ss / (n - 1.0));
    return {mean, student_t_quantile(0.975, n - 1.0) * sd / std::sqrt(n)};
}

}  // namespace cass
