// SPDX-License-Identifier: Apache-2.0
#include "memharness/audit.hpp"

#include <algorithm>
#include <cinttypes>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "memharness/config.hpp"
#include "memharness/errors.hpp"
#include "memharness/experiment.hpp"
#include "memharness/snapshot.hpp"

namespace memh {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Trail

const char* to_string(RecordKind kind) {
    switch (kind) {
        case RecordKind::order_hash: return "order_hash";
        case RecordKind::buffer_norms: return "buffer_norms";
        case RecordKind::bn_checksum: return "bn_checksum";
        case RecordKind::queue_fingerprint: return "queue_fingerprint";
        case RecordKind::ema_decay: return "ema_decay";
        case RecordKind::policy_applied: return "policy_applied";
        case RecordKind::stream_derived: return "stream_derived";
        case RecordKind::branch_event: return "branch_event";
    }
    return "?";
}

RecordKind record_kind_from_string(const std::string& s) {
    if (s == "order_hash") return RecordKind::order_hash;
    if (s == "buffer_norms") return RecordKind::buffer_norms;
    if (s == "bn_checksum") return RecordKind::bn_checksum;
    if (s == "queue_fingerprint") return RecordKind::queue_fingerprint;
    if (s == "ema_decay") return RecordKind::ema_decay;
    if (s == "policy_applied") return RecordKind::policy_applied;
    if (s == "stream_derived") return RecordKind::stream_derived;
    if (s == "branch_event") return RecordKind::branch_event;
    throw ParseError("unknown audit record kind: " + s);
}

std::string AuditRecord::canonical_line() const {
    std::string line = "step=" + std::to_string(step) + " seq=" + std::to_string(seq) +
                       " kind=" + to_string(kind);
    for (const auto& [k, v] : fields) {
        if (k.find_first_of(" \t\n=") != std::string::npos ||
            v.find_first_of("\t\n") != std::string::npos) {
            throw ValidationError("audit field contains reserved characters: " + k);
        }
        line += " " + k + "=" + v;
    }
    return line;
}

void AuditTrail::log(std::int64_t step, RecordKind kind, Fields fields) {
    if (!records_.empty() && step < records_.back().step) {
        throw ValidationError("audit records must have monotone non-decreasing steps");
    }
    AuditRecord rec;
    rec.step = step;
    rec.seq = static_cast<std::int64_t>(records_.size());
    rec.kind = kind;
    rec.fields = std::move(fields);
    const std::string line = rec.canonical_line();
    Sha256 h;
    h.update(chain_);
    h.update(line);
    chain_ = h.finish();
    chain_hex_.push_back(digest_hex(chain_));
    records_.push_back(std::move(rec));
}

std::string AuditTrail::to_text() const {
    std::string out;
    for (std::size_t i = 0; i < records_.size(); ++i) {
        out += records_[i].canonical_line();
        out += '\t';
        out += chain_hex_[i];
        out += '\n';
    }
    return out;
}

void AuditTrail::write(const std::string& path) const {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw Error("cannot open for write: " + path);
    const std::string text = to_text();
    f.write(text.data(), static_cast<std::streamsize>(text.size()));
}

AuditTrail AuditTrail::load_text(const std::string& text, const std::string& branch_name) {
    AuditTrail trail(branch_name);
    std::istringstream in(text);
    std::string line;
    std::int64_t lineno = 0;
    Digest chain = sha256("");
    while (std::getline(in, line)) {
        ++lineno;
        const std::size_t tab = line.rfind('\t');
        if (tab == std::string::npos) {
            throw VerificationError(branch_name + " trail line " + std::to_string(lineno) +
                                    ": missing chain hash");
        }
        const std::string body = line.substr(0, tab);
        const std::string stored_hex = line.substr(tab + 1);
        Sha256 h;
        h.update(chain);
        h.update(body);
        chain = h.finish();
        if (digest_hex(chain) != stored_hex) {
            throw VerificationError(branch_name + " trail line " + std::to_string(lineno) +
                                    ": chain hash mismatch");
        }

        AuditRecord rec;
        std::istringstream fields(body);
        std::string token;
        int position = 0;
        while (fields >> token) {
            const std::size_t eq = token.find('=');
            if (eq == std::string::npos) {
                throw ParseError(branch_name + " trail line " + std::to_string(lineno) +
                                 ": malformed field '" + token + "'");
            }
            const std::string key = token.substr(0, eq);
            std::string value = token.substr(eq + 1);
            // The first three tokens are the fixed header; later tokens are
            // free fields and may reuse the header key names.
            if (position == 0 && key == "step") rec.step = std::stoll(value);
            else if (position == 1 && key == "seq") rec.seq = std::stoll(value);
            else if (position == 2 && key == "kind") rec.kind = record_kind_from_string(value);
            else if (position < 3) {
                throw ParseError(branch_name + " trail line " + std::to_string(lineno) +
                                 ": bad header token '" + token + "'");
            } else {
                rec.fields.emplace_back(key, value);
            }
            ++position;
        }
        trail.records_.push_back(std::move(rec));
        trail.chain_hex_.push_back(stored_hex);
        trail.chain_ = chain;
    }
    return trail;
}

AuditTrail AuditTrail::load(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw Error("cannot open: " + path);
    std::ostringstream ss;
    ss << f.rdbuf();
    return load_text(ss.str(), fs::path(path).filename().string());
}

std::vector<const AuditRecord*> AuditTrail::find(RecordKind kind) const {
    std::vector<const AuditRecord*> out;
    for (const auto& r : records_) {
        if (r.kind == kind) out.push_back(&r);
    }
    return out;
}

std::string field_value(const AuditRecord& record, const std::string& key) {
    for (const auto& [k, v] : record.fields) {
        if (k == key) return v;
    }
    throw ParseError("audit record missing field: " + key);
}

bool has_field(const AuditRecord& record, const std::string& key) {
    for (const auto& [k, v] : record.fields) {
        if (k == key) return true;
    }
    return false;
}

// ---------------------------------------------------------------------------
// Run manifest

std::string RunManifest::to_text() const {
    char seed_hex[17];
    std::snprintf(seed_hex, sizeof seed_hex, "%016" PRIx64, root_seed);
    std::string out = "memharness-run-manifest-v1\n";
    out += std::string("root_seed=") + seed_hex + "\n";
    out += std::string("root_seed_source=") + (root_seed_from_env ? "env:MEMH_ROOT_SEED" : "config") + "\n";
    out += "config_digest=" + config_digest + "\n";
    out += "substrate=" + substrate + "\n";
    for (const auto& line : recipe_summary) out += "recipe." + line + "\n";
    for (const auto& [name, seed] : streams) out += "stream." + name + "=" + seed + "\n";
    return out;
}

RunManifest RunManifest::parse(const std::string& text) {
    RunManifest m;
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line) || line != "memharness-run-manifest-v1") {
        throw ParseError("bad run manifest header");
    }
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos) throw ParseError("bad manifest line: " + line);
        const std::string key = line.substr(0, eq);
        const std::string value = line.substr(eq + 1);
        if (key == "root_seed") m.root_seed = std::stoull(value, nullptr, 16);
        else if (key == "root_seed_source") m.root_seed_from_env = value != "config";
        else if (key == "config_digest") m.config_digest = value;
        else if (key == "substrate") m.substrate = value;
        else if (key.rfind("recipe.", 0) == 0) m.recipe_summary.push_back(key.substr(7) + "=" + value);
        else if (key.rfind("stream.", 0) == 0) m.streams.emplace_back(key.substr(7), value);
        else throw ParseError("unknown manifest key: " + key);
    }
    return m;
}

void RunManifest::write(const std::string& path) const {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw Error("cannot open for write: " + path);
    const std::string text = to_text();
    f.write(text.data(), static_cast<std::streamsize>(text.size()));
}

RunManifest RunManifest::load(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw Error("cannot open: " + path);
    std::ostringstream ss;
    ss << f.rdbuf();
    return parse(ss.str());
}

std::string substrate_note() {
    std::string note = "cxx=";
#if defined(__clang__)
    note += "clang-" + std::to_string(__clang_major__) + "." + std::to_string(__clang_minor__);
#elif defined(__GNUC__)
    note += "gcc-" + std::to_string(__GNUC__) + "." + std::to_string(__GNUC_MINOR__);
#else
    note += "unknown";
#endif
#if defined(__linux__)
    note += " os=linux";
#elif defined(__APPLE__)
    note += " os=darwin";
#else
    note += " os=other";
#endif
    note += " float=ieee754-binary64 blas=eigen-sequential";
    return note;
}

// ---------------------------------------------------------------------------
// Verification

bool VerificationReport::all_pass() const {
    return std::all_of(checks.begin(), checks.end(),
                       [](const VerificationCheck& c) { return c.pass; });
}

std::string VerificationReport::to_text() const {
    std::string out;
    for (const auto& c : checks) {
        out += (c.pass ? "PASS " : "FAIL ") + c.name;
        if (!c.detail.empty()) out += ": " + c.detail;
        out += "\n";
    }
    out += all_pass() ? "verification: all checks passed\n" : "verification: FAILURES present\n";
    return out;
}

namespace {

struct CheckSink {
    VerificationReport report;

    void add(const std::string& name, bool pass, const std::string& detail = "") {
        report.checks.push_back(VerificationCheck{name, pass, detail});
    }

    template <typename Fn>
    void guarded(const std::string& name, Fn&& fn) {
        try {
            fn();
        } catch (const std::exception& e) {
            add(name, false, e.what());
        }
    }
};

std::set<int> aborted_seeds_from_effects(const std::string& run_dir) {
    std::set<int> aborted;
    std::ifstream f(run_dir + "/effects.tsv");
    if (!f) return aborted;
    std::string line;
    while (std::getline(f, line)) {
        if (line.rfind("# aborted\ts", 0) == 0) {
            const std::size_t start = line.find("\ts") + 2;
            const std::size_t colon = line.find(':', start);
            if (colon != std::string::npos) {
                aborted.insert(std::stoi(line.substr(start, colon - start)));
            }
        }
    }
    return aborted;
}

}  // namespace

VerificationReport verify_run(const std::string& run_dir) {
    CheckSink sink;

    std::string config_text;
    ExperimentConfig config;
    bool have_config = false;
    sink.guarded("config", [&] {
        config_text = read_text_file(run_dir + "/config.json");
        config = parse_experiment_config(config_text);
        have_config = true;
        sink.add("config", true);
    });

    RunManifest manifest;
    bool have_manifest = false;
    sink.guarded("manifest", [&] {
        manifest = RunManifest::load(run_dir + "/manifest.txt");
        have_manifest = true;
        sink.add("manifest", true);
    });

    if (have_config && have_manifest) {
        const std::string digest = config_digest_hex(canonical_config_text(config_text));
        sink.add("config_digest", digest == manifest.config_digest,
                 digest == manifest.config_digest ? "" : "config.json does not match manifest");
    }
    if (!have_config) return sink.report;

    const std::set<int> aborted = aborted_seeds_from_effects(run_dir);
    const std::int64_t t0 = config.t0;
    const std::int64_t horizon = config.horizon;
    const bool is_swap = config.intervention.kind == InterventionKind::order_swap;

    for (int i = 0; i < config.seeds; ++i) {
        const std::string si = "s" + std::to_string(i);
        std::map<std::string, AuditTrail> trails;
        for (const auto& branch : {std::string("root"), std::string("control"),
                                   std::string("treat")}) {
            const std::string name = "trail_chain:" + si + "." + branch;
            sink.guarded(name, [&] {
                trails.emplace(branch, AuditTrail::load(trail_path(run_dir, i, branch)));
                sink.add(name, true);
            });
        }
        if (aborted.contains(i)) continue;

        OrderRecord control_record;
        bool have_record = false;
        sink.guarded("order_record:" + si, [&] {
            control_record = load_order_record(order_path(run_dir, i, t0, false));
            have_record = true;
            if (control_record.t0 != t0) {
                sink.add("order_record:" + si, false, "t0 mismatch");
            } else {
                sink.add("order_record:" + si, true);
            }
        });

        // The recorded window hash must match what the control trail logged.
        if (have_record && trails.contains("control")) {
            sink.guarded("order_hash_match:" + si, [&] {
                const auto hashes = trails.at("control").find(RecordKind::order_hash);
                bool found = false;
                for (const auto* rec : hashes) {
                    if (field_value(*rec, "scope") == "window") {
                        found = true;
                        sink.add("order_hash_match:" + si,
                                 field_value(*rec, "hash") == control_record.hash,
                                 field_value(*rec, "hash") == control_record.hash
                                     ? ""
                                     : "stored record disagrees with trail");
                    }
                }
                if (!found) sink.add("order_hash_match:" + si, false, "no window hash in trail");
            });
        }

        OrderRecord treat_record = control_record;
        if (is_swap) {
            sink.guarded("order_record_treat:" + si, [&] {
                treat_record = load_order_record(order_path(run_dir, i, t0, true));
                sink.add("order_record_treat:" + si, true);
            });
        }

        std::map<std::string, Snapshot> snaps;
        for (const auto& which :
             std::vector<std::pair<std::string, std::int64_t>>{{"root", t0},
                                                               {"control", t0},
                                                               {"treat", t0},
                                                               {"control", horizon},
                                                               {"treat", horizon}}) {
            const std::string branch = which.first;
            const std::int64_t t = which.second;
            const std::string key = branch + "@" + std::to_string(t);
            const std::string name = "snapshot:" + si + "." + key;
            sink.guarded(name, [&] {
                snaps.emplace(key, load_snapshot(snapshot_path(run_dir, i, branch, t)));
                sink.add(name, true);
            });
        }

        // Lockstep: identical batch id sequences over the window unless the
        // intervention is the order swap itself.
        sink.guarded("lockstep:" + si, [&] {
            if (!trails.contains("control") || !trails.contains("treat")) {
                sink.add("lockstep:" + si, false, "missing branch trails");
                return;
            }
            std::string ctrl_hash, treat_hash, identity;
            for (const auto* rec : trails.at("control").find(RecordKind::order_hash)) {
                if (field_value(*rec, "scope") == "window") ctrl_hash = field_value(*rec, "hash");
            }
            for (const auto* rec : trails.at("treat").find(RecordKind::order_hash)) {
                if (field_value(*rec, "scope") == "window") {
                    treat_hash = field_value(*rec, "hash");
                    if (has_field(*rec, "identity")) identity = field_value(*rec, "identity");
                }
            }
            if (ctrl_hash.empty() || treat_hash.empty()) {
                sink.add("lockstep:" + si, false, "window hashes missing from trails");
            } else if (!is_swap) {
                sink.add("lockstep:" + si, ctrl_hash == treat_hash,
                         ctrl_hash == treat_hash ? "" : "window order hashes differ");
            } else {
                const bool ok = ctrl_hash != treat_hash || identity == "1";
                sink.add("lockstep:" + si, ok,
                         ok ? "" : "swap hashes equal without identity flag");
            }
        });

        // Isolation: the t0 checksum diff is confined to the intended source.
        sink.guarded("isolation:" + si, [&] {
            const auto c = snaps.find("control@" + std::to_string(t0));
            const auto t = snaps.find("treat@" + std::to_string(t0));
            if (c == snaps.end() || t == snaps.end()) {
                sink.add("isolation:" + si, false, "missing t0 snapshots");
                return;
            }
            const auto dc = all_component_digests(c->second);
            const auto dt = all_component_digests(t->second);
            const auto intended = config.intervention.intended_components();
            for (const auto& [name, digest] : dc) {
                if (dt.at(name) != digest &&
                    std::find(intended.begin(), intended.end(), name) == intended.end()) {
                    sink.add("isolation:" + si, false, "unexpected diff in component " + name);
                    return;
                }
            }
            sink.add("isolation:" + si, true);
        });

        // Final checksums logged in trails must match the stored snapshots.
        for (const auto& branch : {std::string("control"), std::string("treat")}) {
            const std::string name = "final_checksums:" + si + "." + branch;
            sink.guarded(name, [&] {
                const auto snap_it = snaps.find(branch + "@" + std::to_string(horizon));
                if (!trails.contains(branch) || snap_it == snaps.end()) {
                    sink.add(name, false, "missing trail or final snapshot");
                    return;
                }
                const AuditRecord* final_rec = nullptr;
                for (const auto* rec : trails.at(branch).find(RecordKind::branch_event)) {
                    if (field_value(*rec, "event") == "final_checksums") final_rec = rec;
                }
                if (final_rec == nullptr) {
                    sink.add(name, false, "no final_checksums record");
                    return;
                }
                for (const auto& [component, digest] : all_component_digests(snap_it->second)) {
                    if (field_value(*final_rec, component) != digest) {
                        sink.add(name, false, "component " + component + " digest mismatch");
                        return;
                    }
                }
                sink.add(name, true);
            });
        }
    }
    return sink.report;
}

// ---------------------------------------------------------------------------
// Report

namespace {

std::string file_digest(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) return "UNREADABLE";
    Bytes b((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return sha256_hex(b);
}

}  // namespace

std::string emit_report(const std::string& run_dir) {
    std::ostringstream out;
    bool have_config = false;
    ExperimentConfig config;
    try {
        config = parse_experiment_config(read_text_file(run_dir + "/config.json"));
        have_config = true;
    } catch (const std::exception&) {
    }
    std::string effects_text;
    try {
        effects_text = read_text_file(run_dir + "/effects.tsv");
    } catch (const std::exception&) {
    }

    out << "# Memory-sensitive run report\n\n";

    out << "## Datasets\n\n";
    if (have_config) {
        const auto& d = config.recipe.data;
        out << "- Synthetic " << to_string(d.task) << " set: n=" << d.n
            << ", input_dim=" << d.input_dim << ", output_dim=" << d.output_dim
            << ", noise=" << d.noise << "\n";
        out << "- One draw per seed from stream \"data\" (seed-paired replicates); structural "
               "parameters fixed per task shape\n";
    } else {
        out << "- NOT RECORDED\n";
    }
    out << "\n";

    out << "## Architectures\n\n";
    if (have_config) {
        const auto& m = config.recipe.model;
        out << "- " << to_string(m.kind) << " (input_dim=" << m.input_dim
            << ", output_dim=" << m.output_dim;
        if (!m.hidden_sizes.empty()) {
            out << ", hidden=[";
            for (std::size_t i = 0; i < m.hidden_sizes.size(); ++i) {
                out << (i ? "," : "") << m.hidden_sizes[i];
            }
            out << "]" << (m.norm ? ", per-feature norm layers" : "");
        }
        out << ")\n";
    } else {
        out << "- NOT RECORDED\n";
    }
    out << "\n";

    out << "## Seeds & randomness\n\n";
    if (have_config) {
        out << "- Seeds: " << config.seeds
            << " paired seeds; per-seed roots derived as first 8 bytes of "
               "SHA-256(root_seed || 0x00 || \"seed/<i>\")\n";
        out << "- Named streams per run: init, order, augment, model, eval, data (SplitMix64, "
               "single root key)\n";
        out << "- Derived stream keys: see manifest.txt\n";
    } else {
        out << "- NOT RECORDED\n";
    }
    out << "\n";

    out << "## Sampler policy\n\n";
    if (have_config) {
        const auto& s = config.recipe.sampler;
        out << "- Kind: " << to_string(s.kind) << ", batch_size=" << s.batch_size << "\n";
        if (s.kind == SamplerKind::random_reshuffle) {
            out << "- Reshuffle rule: Fisher-Yates on the \"order\" stream at each epoch "
                   "boundary; final short batch kept\n";
        } else if (s.kind == SamplerKind::with_replacement) {
            out << "- With-replacement draws from the \"order\" stream\n";
        } else {
            out << "- Prioritized draws proportional to declared priorities, without "
                   "replacement within a batch; renormalized every "
                << (s.renormalize_every > 0 ? std::to_string(s.renormalize_every)
                                            : std::string("epoch"))
                << " batches; gradients reweighted by 1/(n p_i)\n";
        }
    } else {
        out << "- NOT RECORDED\n";
    }
    out << "\n";

    out << "## Optimizer & meta-state\n\n";
    if (have_config) {
        const auto& o = config.recipe.optimizer;
        if (o.kind == OptimizerConfig::Kind::sgd_momentum) {
            out << "- SGD momentum, beta=" << o.beta << "\n";
        } else {
            out << "- AdamW, beta1=" << o.beta1 << ", beta2=" << o.beta2 << ", eps=" << o.eps
                << ", weight_decay=" << o.weight_decay << " (decoupled)\n";
        }
        const auto& a = config.recipe.averaging;
        out << "- EMA: " << (a.ema_alpha ? "alpha=" + std::to_string(*a.ema_alpha) : "none")
            << "; SWA: " << (a.swa ? "enabled" : "none") << "; teacher: "
            << (a.teacher_alpha ? "alpha=" + std::to_string(*a.teacher_alpha) : "none") << "\n";
        out << "- Carry vs reset at the branch boundary (t0=" << config.t0 << "): ";
        switch (config.intervention.kind) {
            case InterventionKind::null_intervention:
                out << "all components carried in both branches (null intervention)\n";
                break;
            case InterventionKind::opt_reset:
                out << "Treat resets optimizer moments"
                    << (config.intervention.freeze_ema ? " and freezes EMA for the window" : "")
                    << "; Control carries\n";
                break;
            case InterventionKind::order_swap:
                out << "all state carried; Treat replays a permuted order window\n";
                break;
            case InterventionKind::phase_policy: {
                const auto& p = config.intervention.phase_policy;
                out << "Treat applies policy {optimizer=" << to_string(p.optimizer)
                    << ", ema=" << to_string(p.ema) << ", swa=" << to_string(p.swa)
                    << ", teacher=" << to_string(p.teacher) << ", bn=" << to_string(p.bn)
                    << ", queue=" << to_string(p.queue) << "}; Control carries\n";
                break;
            }
            case InterventionKind::teacher_lag:
                out << "Treat sets teacher alpha'=" << config.intervention.teacher_alpha_prime
                    << " for the window, then restores; Control carries\n";
                break;
            case InterventionKind::queue_op:
                out << "Treat " << to_string(config.intervention.queue_mode)
                    << "s the queue for the window; Control carries\n";
                break;
        }
        out << "- BN handling: "
            << (config.bn_recal_before_final
                    ? "recalibrated on the declared calibration slice before final eval"
                    : (config.recipe.model.has_norm_layer() ? "running stats carried (no final recalibration)"
                                                            : "no norm layers"))
            << "\n";
    } else {
        out << "- NOT RECORDED\n";
    }
    out << "\n";

    out << "## Schedules\n\n";
    if (have_config) {
        const auto& s = config.recipe.schedule;
        out << "- base_lr=" << s.base_lr << ", warmup_steps=" << s.warmup_steps << ", kind="
            << (s.kind == Schedule::Kind::constant ? "constant" : "cosine");
        if (s.kind == Schedule::Kind::cosine) out << " (total_steps=" << s.total_steps << ")";
        out << "\n";
        if (config.intervention.rewarm_k) {
            out << "- Rewarm: " << *config.intervention.rewarm_k
                << "-step warmup applied identically in both branches at t0\n";
        } else if (config.intervention.kind == InterventionKind::phase_policy &&
                   config.intervention.phase_policy.optimizer == PolicyAction::rewarm) {
            out << "- Rewarm: " << config.intervention.phase_policy.rewarm_len
                << "-step warmup in the Treat branch at t0\n";
        } else {
            out << "- No restarts; buffers interact with the schedule only via the declared "
                   "intervention\n";
        }
    } else {
        out << "- NOT RECORDED\n";
    }
    out << "\n";

    out << "## Transforms / preprocessing\n\n";
    if (have_config) {
        if (config.recipe.data.aug_noise > 0) {
            out << "- Per-example Gaussian view jitter, scale=" << config.recipe.data.aug_noise
                << ", seeded per (example, step) from the \"augment\" stream\n";
            out << "- Window replays reuse recorded per-example augmentation seeds"
                << (config.intervention.kind == InterventionKind::order_swap &&
                            !config.intervention.reuse_aug
                        ? " (treat branch re-seeded deterministically)"
                        : "")
                << "\n";
        } else {
            out << "- Identity views (aug_noise=0); augmentation seeds recorded per example "
                   "slot for replay fidelity\n";
        }
    } else {
        out << "- NOT RECORDED\n";
    }
    out << "\n";

    out << "## Compute budget\n\n";
    if (have_config) {
        out << "- Horizon: " << config.horizon << " steps per branch; window W="
            << config.resolved_window() << " from t0=" << config.t0 << "\n";
        out << "- Branches: " << config.seeds << " seeds x (control + treat); batch_size="
            << config.recipe.sampler.batch_size << "\n";
        out << "- Eval cadence: probe readouts at t0+W and at the horizon\n";
        out << "- Hardware: see substrate line in manifest.txt\n";
    } else {
        out << "- NOT RECORDED\n";
    }
    out << "\n";

    out << "## Probe\n\n";
    if (have_config) {
        out << "- Fixed probe of " << config.probe_size
            << " examples drawn once per experiment from stream \"eval\"; frozen and shared "
               "by every branch and seed\n";
    } else {
        out << "- NOT RECORDED\n";
    }
    out << "\n";

    out << "## Metrics\n\n";
    if (have_config) {
        out << "- Probe metric: " << to_string(config.metric.kind)
            << (config.metric.is_distance()
                    ? " (distance; z >= 0, mean over probe examples)"
                    : " (scalar; z = M(treat) - M(control))")
            << "\n";
        bool cka = false;
        std::istringstream eff(effects_text);
        std::string line;
        while (std::getline(eff, line)) {
            if (line.rfind("# cka_final", 0) == 0) {
                out << "- Linear CKA (last hidden layer, control vs treat at horizon): "
                    << line.substr(12) << "\n";
                cka = true;
            }
        }
        if (!cka) out << "- Representation readout: NOT RECORDED (model has no hidden layers)\n";
    } else {
        out << "- NOT RECORDED\n";
    }
    out << "\n";

    out << "## Uncertainty\n\n";
    if (have_config) {
        out << "- CI method: percentile bootstrap over paired seeds, B="
            << config.bootstrap_rounds << ", stream \"boot\", type-7 quantiles\n";
        if (config.epsilon) {
            out << "- Equivalence margin: epsilon=" << *config.epsilon
                << " (TOST at alpha=" << config.alpha << ", df=n-1)\n";
        } else {
            out << "- Equivalence margin: not declared\n";
        }
        std::string tests = "NOT RECORDED";
        std::istringstream eff(effects_text);
        std::string line;
        while (std::getline(eff, line)) {
            if (line.rfind("# tests\tcount=", 0) == 0) tests = line.substr(14);
        }
        out << "- Multiple-comparison policy: no correction applied; number of statistical "
               "tests disclosed: "
            << tests << "\n";
    } else {
        out << "- NOT RECORDED\n";
    }
    out << "\n";

    out << "## Artifacts\n\n";
    std::vector<std::string> files;
    if (fs::exists(run_dir)) {
        for (const auto& entry : fs::directory_iterator(run_dir)) {
            if (!entry.is_regular_file()) continue;
            const std::string name = entry.path().filename().string();
            if (name == "report.md") continue;
            files.push_back(name);
        }
    }
    std::sort(files.begin(), files.end());
    if (files.empty()) {
        out << "- NOT RECORDED\n";
    } else {
        for (const auto& name : files) {
            out << "- " << name << " sha256=" << file_digest(run_dir + "/" + name) << "\n";
        }
    }
    out << "\n";

    out << "## Effect summary\n\n";
    if (effects_text.empty()) {
        out << "NOT RECORDED\n";
    } else {
        out << "```\n" << effects_text << "```\n";
    }
    return out.str();
}

}  // namespace memh
