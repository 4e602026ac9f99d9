// SPDX-License-Identifier: Apache-2.0
#include "memharness/stats.hpp"

#include <algorithm>
#include <boost/math/distributions/students_t.hpp>
#include <cmath>

#include "memharness/errors.hpp"

namespace memh {

namespace {

Eigen::Index argmax_lowest(const Eigen::RowVectorXd& row) {
    Eigen::Index best = 0;
    for (Eigen::Index j = 1; j < row.size(); ++j) {
        if (row[j] > row[best]) best = j;
    }
    return best;
}

void check_distribution(const Eigen::VectorXd& p) {
    for (Eigen::Index i = 0; i < p.size(); ++i) {
        if (p[i] < -1e-12 || !std::isfinite(p[i])) {
            throw ValidationError("distribution entries must be non-negative and finite");
        }
    }
    if (std::abs(p.sum() - 1.0) > 1e-6) {
        throw ValidationError("distribution must sum to 1");
    }
}

// TV and Hellinger between unit-variance Gaussians whose means differ by d
// in Euclidean norm; used for regression / embedding outputs.
double gaussian_tv(double d) { return std::erf(d / (2.0 * std::sqrt(2.0))); }
double gaussian_hellinger(double d) { return std::sqrt(1.0 - std::exp(-d * d / 8.0)); }

}  // namespace

double quantile_type7(std::vector<double> values, double q) {
    if (values.empty()) throw ValidationError("quantile of empty sample");
    if (q < 0 || q > 1) throw ValidationError("quantile level must be in [0, 1]");
    std::sort(values.begin(), values.end());
    const double h = static_cast<double>(values.size() - 1) * q;
    const auto lo = static_cast<std::size_t>(h);
    if (lo + 1 >= values.size()) return values.back();
    const double frac = h - static_cast<double>(lo);
    return values[lo] + frac * (values[lo + 1] - values[lo]);
}

EffectEstimate paired_ate_ci(const std::vector<double>& z, std::int64_t bootstrap_rounds,
                             RngStream& stream) {
    if (z.empty()) throw ValidationError("paired_ate_ci requires at least one seed value");
    if (bootstrap_rounds < 1) throw ValidationError("bootstrap rounds must be >= 1");

    EffectEstimate est;
    est.per_seed = z;
    est.bootstrap_rounds = bootstrap_rounds;
    double sum = 0.0;
    for (double v : z) sum += v;
    est.ate = sum / static_cast<double>(z.size());

    std::vector<double> means;
    means.reserve(static_cast<std::size_t>(bootstrap_rounds));
    const auto n = z.size();
    for (std::int64_t b = 0; b < bootstrap_rounds; ++b) {
        double m = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            m += z[static_cast<std::size_t>(stream.bounded(n))];
        }
        means.push_back(m / static_cast<double>(n));
    }
    est.ci_lo = quantile_type7(means, 0.025);
    est.ci_hi = quantile_type7(means, 0.975);
    est.ci_width = est.ci_hi - est.ci_lo;
    return est;
}

EquivalenceResult tost(const std::vector<double>& deltas, double epsilon, double alpha_level) {
    if (epsilon <= 0) throw ValidationError("equivalence margin must be positive");
    if (!(alpha_level > 0 && alpha_level < 0.5)) {
        throw ValidationError("alpha must be in (0, 0.5)");
    }
    if (deltas.size() < 2) {
        throw ValidationError("TOST needs at least 2 seed-level deltas (df = n - 1)");
    }

    EquivalenceResult r;
    r.n = static_cast<std::int64_t>(deltas.size());
    r.epsilon = epsilon;
    r.alpha_level = alpha_level;
    double sum = 0.0;
    for (double d : deltas) sum += d;
    r.mean_delta = sum / static_cast<double>(r.n);
    double sq = 0.0;
    for (double d : deltas) sq += (d - r.mean_delta) * (d - r.mean_delta);
    r.stddev = std::sqrt(sq / static_cast<double>(r.n - 1));

    if (r.stddev == 0.0) {
        // Degenerate sample: decision by the mean alone.
        const bool inside = std::abs(r.mean_delta) < epsilon;
        r.p_lower = (r.mean_delta > -epsilon) ? 0.0 : 1.0;
        r.p_upper = (r.mean_delta < epsilon) ? 0.0 : 1.0;
        r.ci_lo = r.ci_hi = r.mean_delta;
        r.equivalent = inside;
        return r;
    }

    const double se = r.stddev / std::sqrt(static_cast<double>(r.n));
    const boost::math::students_t dist(static_cast<double>(r.n - 1));
    const double t_lower = (r.mean_delta + epsilon) / se;
    const double t_upper = (r.mean_delta - epsilon) / se;
    r.p_lower = boost::math::cdf(dist, -t_lower);
    r.p_upper = boost::math::cdf(dist, t_upper);
    const double t_crit = boost::math::quantile(dist, 1.0 - alpha_level);
    r.ci_lo = r.mean_delta - t_crit * se;
    r.ci_hi = r.mean_delta + t_crit * se;
    r.equivalent = r.p_lower < alpha_level && r.p_upper < alpha_level;
    return r;
}

double prob_distance(const Eigen::VectorXd& p, const Eigen::VectorXd& q, DistanceKind kind) {
    if (p.size() != q.size()) throw ValidationError("distributions must share a support");
    check_distribution(p);
    check_distribution(q);
    switch (kind) {
        case DistanceKind::tv:
            return 0.5 * (p - q).array().abs().sum();
        case DistanceKind::js: {
            const Eigen::VectorXd m = 0.5 * (p + q);
            double js = 0.0;
            for (Eigen::Index i = 0; i < p.size(); ++i) {
                if (p[i] > 0) js += 0.5 * p[i] * std::log2(p[i] / m[i]);
                if (q[i] > 0) js += 0.5 * q[i] * std::log2(q[i] / m[i]);
            }
            return std::max(0.0, js);
        }
        case DistanceKind::hellinger: {
            double bc = 0.0;
            for (Eigen::Index i = 0; i < p.size(); ++i) {
                bc += std::sqrt(std::max(p[i], 0.0) * std::max(q[i], 0.0));
            }
            return std::sqrt(std::max(0.0, 1.0 - bc));
        }
    }
    throw ValidationError("unknown distance kind");
}

double disagreement(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        throw ValidationError("outputs must have matching shape");
    }
    if (a.cols() < 2) throw ValidationError("disagreement requires classification outputs");
    std::int64_t diff = 0;
    for (Eigen::Index i = 0; i < a.rows(); ++i) {
        if (argmax_lowest(a.row(i)) != argmax_lowest(b.row(i))) ++diff;
    }
    return static_cast<double>(diff) / static_cast<double>(a.rows());
}

double ece(const Eigen::MatrixXd& preds, const std::vector<int>& labels, int bins) {
    if (bins < 1) throw ValidationError("ece requires bins >= 1");
    if (static_cast<Eigen::Index>(labels.size()) != preds.rows()) {
        throw ValidationError("labels must align with predictions");
    }
    std::vector<double> conf_sum(static_cast<std::size_t>(bins), 0.0);
    std::vector<double> acc_sum(static_cast<std::size_t>(bins), 0.0);
    std::vector<std::int64_t> count(static_cast<std::size_t>(bins), 0);
    for (Eigen::Index i = 0; i < preds.rows(); ++i) {
        const Eigen::Index pred = argmax_lowest(preds.row(i));
        const double conf = preds(i, pred);
        auto b = static_cast<std::size_t>(std::min<int>(
            bins - 1, static_cast<int>(conf * static_cast<double>(bins))));
        conf_sum[b] += conf;
        acc_sum[b] += (pred == labels[static_cast<std::size_t>(i)]) ? 1.0 : 0.0;
        count[b] += 1;
    }
    double e = 0.0;
    const double n = static_cast<double>(preds.rows());
    for (std::size_t b = 0; b < static_cast<std::size_t>(bins); ++b) {
        if (count[b] == 0) continue;
        const double c = static_cast<double>(count[b]);
        e += (c / n) * std::abs(acc_sum[b] / c - conf_sum[b] / c);
    }
    return e;
}

NllResult nll(const Eigen::MatrixXd& preds, const std::vector<int>& labels) {
    if (static_cast<Eigen::Index>(labels.size()) != preds.rows()) {
        throw ValidationError("labels must align with predictions");
    }
    NllResult r;
    for (Eigen::Index i = 0; i < preds.rows(); ++i) {
        const int y = labels[static_cast<std::size_t>(i)];
        if (y < 0 || y >= preds.cols()) throw ValidationError("label out of range");
        double p = preds(i, y);
        if (p < 1e-12) {
            p = 1e-12;
            r.clamped += 1;
        }
        r.value -= std::log(p);
    }
    r.value /= static_cast<double>(preds.rows());
    return r;
}

double accuracy(const Eigen::MatrixXd& preds, const std::vector<int>& labels) {
    if (static_cast<Eigen::Index>(labels.size()) != preds.rows()) {
        throw ValidationError("labels must align with predictions");
    }
    std::int64_t hit = 0;
    for (Eigen::Index i = 0; i < preds.rows(); ++i) {
        if (argmax_lowest(preds.row(i)) == labels[static_cast<std::size_t>(i)]) ++hit;
    }
    return static_cast<double>(hit) / static_cast<double>(preds.rows());
}

double linear_cka(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y) {
    if (x.rows() != y.rows() || x.rows() < 2) {
        throw ValidationError("linear_cka requires matching row counts >= 2");
    }
    const Eigen::MatrixXd xc = x.rowwise() - x.colwise().mean();
    const Eigen::MatrixXd yc = y.rowwise() - y.colwise().mean();
    const double denom_x = (xc.transpose() * xc).norm();
    const double denom_y = (yc.transpose() * yc).norm();
    if (denom_x == 0.0 || denom_y == 0.0) {
        throw ValidationError("linear_cka undefined for zero-variance activations");
    }
    const double hsic = (xc.transpose() * yc).squaredNorm();
    return std::clamp(hsic / (denom_x * denom_y), 0.0, 1.0);
}

bool MetricSpec::is_distance() const {
    switch (kind) {
        case MetricKind::tv:
        case MetricKind::js:
        case MetricKind::hellinger:
        case MetricKind::l2:
        case MetricKind::disagreement:
            return true;
        case MetricKind::acc:
        case MetricKind::ece:
        case MetricKind::nll:
            return false;
    }
    return false;
}

void MetricSpec::validate_for(Task task) const {
    const bool classification = task == Task::classify;
    switch (kind) {
        case MetricKind::js:
        case MetricKind::disagreement:
        case MetricKind::acc:
        case MetricKind::ece:
        case MetricKind::nll:
            if (!classification) {
                throw ValidationError(std::string("metric ") + to_string(kind) +
                                      " requires a classification probe");
            }
            break;
        case MetricKind::tv:
        case MetricKind::hellinger:
        case MetricKind::l2:
            break;
    }
    if (kind == MetricKind::ece && ece_bins < 1) {
        throw ValidationError("ece requires at least one bin");
    }
}

double probe_metric(const MetricSpec& metric, const Probe& probe, const PredictiveOutput& control,
                    const PredictiveOutput& treat) {
    metric.validate_for(probe.data.task);
    const Eigen::MatrixXd& a = control.rows;
    const Eigen::MatrixXd& b = treat.rows;
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        throw ValidationError("branch outputs must have matching shape");
    }
    const bool classification = probe.data.task == Task::classify;

    switch (metric.kind) {
        case MetricKind::tv:
        case MetricKind::js:
        case MetricKind::hellinger: {
            double total = 0.0;
            for (Eigen::Index i = 0; i < a.rows(); ++i) {
                if (classification) {
                    const DistanceKind dk = metric.kind == MetricKind::tv ? DistanceKind::tv
                                            : metric.kind == MetricKind::js
                                                ? DistanceKind::js
                                                : DistanceKind::hellinger;
                    total += prob_distance(a.row(i).transpose(), b.row(i).transpose(), dk);
                } else {
                    const double d = (a.row(i) - b.row(i)).norm();
                    total += metric.kind == MetricKind::tv ? gaussian_tv(d)
                                                           : gaussian_hellinger(d);
                }
            }
            return total / static_cast<double>(a.rows());
        }
        case MetricKind::l2: {
            double total = 0.0;
            for (Eigen::Index i = 0; i < a.rows(); ++i) {
                total += (a.row(i) - b.row(i)).norm();
            }
            return total / static_cast<double>(a.rows());
        }
        case MetricKind::disagreement:
            return disagreement(a, b);
        case MetricKind::acc:
            return accuracy(b, probe.data.labels) - accuracy(a, probe.data.labels);
        case MetricKind::ece:
            return ece(b, probe.data.labels, metric.ece_bins) -
                   ece(a, probe.data.labels, metric.ece_bins);
        case MetricKind::nll:
            return nll(b, probe.data.labels).value - nll(a, probe.data.labels).value;
    }
    throw ValidationError("unknown metric kind");
}

MetricKind metric_kind_from_string(const std::string& s) {
    if (s == "tv") return MetricKind::tv;
    if (s == "js") return MetricKind::js;
    if (s == "hellinger") return MetricKind::hellinger;
    if (s == "l2") return MetricKind::l2;
    if (s == "disagreement") return MetricKind::disagreement;
    if (s == "acc") return MetricKind::acc;
    if (s == "ece") return MetricKind::ece;
    if (s == "nll") return MetricKind::nll;
    throw ValidationError("unknown metric: " + s);
}

const char* to_string(MetricKind kind) {
    switch (kind) {
        case MetricKind::tv: return "tv";
        case MetricKind::js: return "js";
        case MetricKind::hellinger: return "hellinger";
        case MetricKind::l2: return "l2";
        case MetricKind::disagreement: return "disagreement";
        case MetricKind::acc: return "acc";
        case MetricKind::ece: return "ece";
        case MetricKind::nll: return "nll";
    }
    return "?";
}

}  // namespace memh
