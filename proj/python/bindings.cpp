// SPDX-License-Identifier: Apache-2.0
#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <optional>

#include "memharness/experiment.hpp"

namespace py = pybind11;
using namespace memh;

namespace {

py::dict estimate_to_dict(const EffectEstimate& est) {
    py::dict d;
    d["ate"] = est.ate;
    d["ci_lo"] = est.ci_lo;
    d["ci_hi"] = est.ci_hi;
    d["ci_width"] = est.ci_width;
    d["bootstrap_rounds"] = est.bootstrap_rounds;
    d["per_seed"] = est.per_seed;
    return d;
}

py::dict tost_to_dict(const EquivalenceResult& r) {
    py::dict d;
    d["mean"] = r.mean_delta;
    d["stddev"] = r.stddev;
    d["n"] = r.n;
    d["epsilon"] = r.epsilon;
    d["alpha"] = r.alpha_level;
    d["p_lower"] = r.p_lower;
    d["p_upper"] = r.p_upper;
    d["ci_lo"] = r.ci_lo;
    d["ci_hi"] = r.ci_hi;
    d["equivalent"] = r.equivalent;
    return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Causal measurement harness for training memory: branch-and-hold "
              "interventions, paired effect estimates, and audit artifacts.";
    m.attr("__version__") = "0.1.0";

    py::register_exception<ValidationError>(m, "ValidationError", PyExc_ValueError);
    py::register_exception<VerificationError>(m, "VerificationError", PyExc_RuntimeError);
    py::register_exception<DivergenceError>(m, "DivergenceError", PyExc_RuntimeError);

    m.def("half_life", &half_life, py::arg("beta"),
          "Steps until a past gradient's geometric weight halves: log(0.5)/log(beta).");

    m.def("derive_seed", &derive_seed, py::arg("root_seed"), py::arg("name"),
          "Derived stream seed: first 8 bytes (BE) of SHA-256(root u64 BE || 0x00 || name).");

    m.def(
        "order_hash",
        [](const std::vector<std::vector<std::uint32_t>>& batches) {
            return order_hash(batches);
        },
        py::arg("batches"),
        "SHA-256 over per-batch (u32 BE length, ids as u64 BE), hex encoded.");

    m.def(
        "prob_distance",
        [](const Eigen::VectorXd& p, const Eigen::VectorXd& q, const std::string& kind) {
            DistanceKind k;
            if (kind == "tv") k = DistanceKind::tv;
            else if (kind == "js") k = DistanceKind::js;
            else if (kind == "hellinger") k = DistanceKind::hellinger;
            else throw ValidationError("unknown distance kind: " + kind);
            return prob_distance(p, q, k);
        },
        py::arg("p"), py::arg("q"), py::arg("kind") = "tv");

    m.def("disagreement", &disagreement, py::arg("a"), py::arg("b"),
          "Fraction of rows whose argmax labels differ (ties to lowest index).");

    m.def("ece", &ece, py::arg("preds"), py::arg("labels"), py::arg("bins") = 10);

    m.def(
        "nll",
        [](const Eigen::MatrixXd& preds, const std::vector<int>& labels) {
            const NllResult r = nll(preds, labels);
            return py::make_tuple(r.value, r.clamped);
        },
        py::arg("preds"), py::arg("labels"),
        "Mean negative log likelihood; returns (value, clamped_count).");

    m.def("accuracy", &accuracy, py::arg("preds"), py::arg("labels"));

    m.def("linear_cka", &linear_cka, py::arg("x"), py::arg("y"),
          "Linear CKA between activation matrices (columns centered internally).");

    m.def(
        "paired_ate_ci",
        [](const std::vector<double>& z, std::int64_t bootstrap_rounds,
           std::uint64_t root_seed) {
            RngStream boot = make_stream(root_seed, kStreamBoot);
            return estimate_to_dict(paired_ate_ci(z, bootstrap_rounds, boot));
        },
        py::arg("z"), py::arg("bootstrap_rounds") = 10000, py::arg("root_seed") = 1,
        "Paired ATE with a percentile bootstrap CI over the seed-level values.");

    m.def(
        "tost",
        [](const std::vector<double>& deltas, double epsilon, double alpha) {
            return tost_to_dict(tost(deltas, epsilon, alpha));
        },
        py::arg("deltas"), py::arg("epsilon"), py::arg("alpha") = 0.05,
        "Two one-sided t tests for equivalence within (-epsilon, epsilon).");

    m.def(
        "suggest_window",
        [](const std::string& kind, std::optional<double> beta,
           std::optional<double> teacher_alpha, std::optional<std::int64_t> queue_capacity,
           std::optional<int> batch_size, std::optional<std::int64_t> dataset_n,
           std::optional<std::int64_t> k_epochs, std::optional<std::string> sampler) {
            InterventionSpec spec;
            spec.kind = intervention_kind_from_string(kind);
            WindowContext ctx;
            ctx.beta = beta;
            ctx.teacher_alpha = teacher_alpha;
            ctx.queue_capacity = queue_capacity;
            ctx.batch_size = batch_size;
            ctx.dataset_n = dataset_n;
            ctx.k_epochs = k_epochs;
            if (sampler) {
                if (*sampler == "rr") ctx.sampler_kind = SamplerKind::random_reshuffle;
                else if (*sampler == "wr") ctx.sampler_kind = SamplerKind::with_replacement;
                else throw ValidationError("unknown sampler: " + *sampler);
            }
            return suggest_window(spec, ctx);
        },
        py::arg("kind"), py::arg("beta") = py::none(), py::arg("teacher_alpha") = py::none(),
        py::arg("queue_capacity") = py::none(), py::arg("batch_size") = py::none(),
        py::arg("dataset_n") = py::none(), py::arg("k_epochs") = py::none(),
        py::arg("sampler") = py::none(),
        "Window matched to the perturbed source's characteristic lifetime.");

    m.def(
        "run_experiment",
        [](const std::string& config_json, const std::string& out_dir) {
            const ExperimentConfig config = parse_experiment_config(config_json);
            const ExperimentResult result =
                run_experiment(config, canonical_config_text(config_json), out_dir);
            py::dict d;
            d["early"] = estimate_to_dict(result.early);
            d["final"] = estimate_to_dict(result.final);
            if (result.tost_early) d["tost_early"] = tost_to_dict(*result.tost_early);
            if (result.tost_final) d["tost_final"] = tost_to_dict(*result.tost_final);
            d["aborted"] = result.aborted;
            std::vector<py::dict> seeds;
            for (const auto& s : result.outcome.seeds) {
                py::dict sd;
                sd["seed"] = s.seed_index;
                sd["z_early"] = s.z_early;
                sd["z_final"] = s.z_final;
                sd["aborted"] = s.aborted;
                sd["window_hash_control"] = s.window_hash_control;
                sd["window_hash_treat"] = s.window_hash_treat;
                if (s.final_cka) sd["final_cka"] = *s.final_cka;
                seeds.push_back(sd);
            }
            d["seeds"] = seeds;
            return d;
        },
        py::arg("config_json"), py::arg("out_dir"),
        "Run a branch-and-hold experiment from a JSON spec into a run directory.");

    m.def(
        "verify_run",
        [](const std::string& run_dir) {
            const VerificationReport report = verify_run(run_dir);
            std::vector<py::dict> checks;
            for (const auto& c : report.checks) {
                py::dict cd;
                cd["name"] = c.name;
                cd["pass"] = c.pass;
                cd["detail"] = c.detail;
                checks.push_back(cd);
            }
            py::dict d;
            d["all_pass"] = report.all_pass();
            d["checks"] = checks;
            return d;
        },
        py::arg("run_dir"), "Post-hoc verification of a run directory.");

    m.def("replay_run", &replay_run, py::arg("run_dir"),
          "Re-executes a stored run; returns '' on success or the first divergence.");

    m.def("emit_report", &emit_report, py::arg("run_dir"),
          "Memory-sensitive report (a pure function of the run directory).");

    m.def(
        "canonical_config", [](const std::string& text) { return canonical_config_text(text); },
        py::arg("json_text"), "Canonical byte form used for config digests.");

    m.def(
        "config_digest",
        [](const std::string& text) { return config_digest_hex(canonical_config_text(text)); },
        py::arg("json_text"));

    m.attr("EMPTY_SHA256") = kEmptySha256Hex;
}
