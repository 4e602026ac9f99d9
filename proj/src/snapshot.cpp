// SPDX-License-Identifier: Apache-2.0
#include "memharness/snapshot.hpp"

#include <algorithm>
#include <cinttypes>
#include <cstdio>
#include <fstream>

#include "memharness/errors.hpp"
#include "memharness/sha256.hpp"

namespace memh {

namespace {

constexpr char kSnapshotMagic[9] = "MEMH-SS1";
constexpr std::uint32_t kSnapshotVersion = 1;

void put_vec(ByteWriter& w, const Eigen::VectorXd& v) {
    w.u64_le(static_cast<std::uint64_t>(v.size()));
    for (Eigen::Index i = 0; i < v.size(); ++i) w.f64_le(v[i]);
}

Eigen::VectorXd get_vec(ByteReader& r) {
    const auto n = r.u64_le();
    Eigen::VectorXd v(static_cast<Eigen::Index>(n));
    for (std::uint64_t i = 0; i < n; ++i) v[static_cast<Eigen::Index>(i)] = r.f64_le();
    return v;
}

void put_stream(ByteWriter& w, const RngStream& s) {
    w.str(s.name);
    w.u64_le(s.state);
    w.u64_le(s.draws);
}

RngStream get_stream(ByteReader& r) {
    RngStream s;
    s.name = r.str();
    s.state = r.u64_le();
    s.draws = r.u64_le();
    return s;
}

std::string hex_u64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016" PRIx64, v);
    return buf;
}

Bytes section_meta(const Snapshot& s) {
    ByteWriter w;
    w.u64_le(kSnapshotVersion);
    w.i64_le(s.step);
    return w.take();
}

Bytes section_schedule(const Snapshot& s) {
    ByteWriter w;
    w.f64_le(s.schedule.base_lr);
    w.i64_le(s.schedule.warmup_steps);
    w.u32_le(static_cast<std::uint32_t>(s.schedule.kind));
    w.i64_le(s.schedule.total_steps);
    w.i64_le(s.schedule.rewarm_at);
    w.i64_le(s.schedule.rewarm_len);
    w.i64_le(s.schedule_pos);
    return w.take();
}

Bytes section_params(const Snapshot& s) {
    ByteWriter w;
    const auto& segs = s.params.layout->segments();
    w.u32_le(static_cast<std::uint32_t>(segs.size()));
    for (const auto& seg : segs) {
        w.str(seg.name);
        w.u64_le(seg.offset);
        w.u64_le(seg.length);
    }
    put_vec(w, s.params.values);
    return w.take();
}

// Buffer vectors are stored as named segments mirroring the parameter
// layout, so per-layer buffer bytes stay attributable in audits.
void put_segmented(ByteWriter& w, const Eigen::VectorXd& v, const ParamLayout& layout) {
    w.u32_le(static_cast<std::uint32_t>(layout.segments().size()));
    for (const auto& seg : layout.segments()) {
        w.str(seg.name);
        w.u64_le(seg.length);
        for (std::size_t i = 0; i < seg.length; ++i) {
            w.f64_le(v[static_cast<Eigen::Index>(seg.offset + i)]);
        }
    }
}

Eigen::VectorXd get_segmented(ByteReader& r, Eigen::Index total) {
    Eigen::VectorXd v(total);
    const std::uint32_t n_segs = r.u32_le();
    Eigen::Index pos = 0;
    for (std::uint32_t s = 0; s < n_segs; ++s) {
        (void)r.str();
        const std::uint64_t len = r.u64_le();
        for (std::uint64_t i = 0; i < len; ++i) {
            if (pos >= total) throw ParseError("segmented vector overflows its layout");
            v[pos++] = r.f64_le();
        }
    }
    if (pos != total) throw ParseError("segmented vector does not cover its layout");
    return v;
}

Bytes section_optimizer(const Snapshot& s) {
    ByteWriter w;
    w.i64_le(s.opt.step_count);
    const ParamLayout& layout = *s.params.layout;
    if (const auto* sgd = std::get_if<SgdMomentum>(&s.opt.state)) {
        w.u32_le(0);
        w.f64_le(sgd->beta);
        put_segmented(w, sgd->velocity, layout);
    } else {
        const auto& a = std::get<AdamW>(s.opt.state);
        w.u32_le(1);
        w.f64_le(a.beta1);
        w.f64_le(a.beta2);
        w.f64_le(a.eps);
        w.f64_le(a.weight_decay);
        put_segmented(w, a.m, layout);
        put_segmented(w, a.v, layout);
    }
    return w.take();
}

Bytes section_ema(const Snapshot& s) {
    ByteWriter w;
    w.u8(s.avg.ema ? 1 : 0);
    if (s.avg.ema) {
        w.f64_le(s.avg.ema->alpha);
        w.u8(s.avg.ema->frozen ? 1 : 0);
        put_vec(w, s.avg.ema->weights);
    }
    return w.take();
}

Bytes section_swa(const Snapshot& s) {
    ByteWriter w;
    w.u8(s.avg.swa ? 1 : 0);
    if (s.avg.swa) {
        w.i64_le(s.avg.swa->count);
        put_vec(w, s.avg.swa->sum);
    }
    return w.take();
}

Bytes section_teacher(const Snapshot& s) {
    ByteWriter w;
    w.u8(s.avg.teacher ? 1 : 0);
    if (s.avg.teacher) {
        w.f64_le(s.avg.teacher->alpha);
        put_vec(w, s.avg.teacher->weights);
    }
    return w.take();
}

Bytes section_bn(const Snapshot& s) {
    ByteWriter w;
    w.f64_le(s.norm.rho);
    w.u32_le(static_cast<std::uint32_t>(s.norm.layers.size()));
    for (const auto& layer : s.norm.layers) {
        put_vec(w, layer.running_mean);
        put_vec(w, layer.running_var);
    }
    return w.take();
}

Bytes section_sampler(const Snapshot& s) {
    ByteWriter w;
    const auto& p = s.sampler.policy;
    w.u32_le(static_cast<std::uint32_t>(p.kind));
    w.u32_le(static_cast<std::uint32_t>(p.batch_size));
    put_vec(w, p.priorities);
    w.i64_le(p.renormalize_every);
    w.i64_le(s.sampler.n);
    w.i64_le(s.sampler.epoch);
    w.i64_le(s.sampler.cursor);
    w.i64_le(s.sampler.batches_drawn);
    w.u64_le(static_cast<std::uint64_t>(s.sampler.permutation.size()));
    for (std::uint32_t id : s.sampler.permutation) w.u32_le(id);
    put_vec(w, s.sampler.live_priorities);
    put_stream(w, s.sampler.stream);
    return w.take();
}

Bytes section_queue(const Snapshot& s) {
    ByteWriter w;
    w.u8(s.queue ? 1 : 0);
    if (s.queue) {
        w.i64_le(s.queue->capacity);
        w.u8(s.queue->frozen ? 1 : 0);
        w.u32_le(static_cast<std::uint32_t>(s.queue->entries.size()));
        for (const auto& e : s.queue->entries) {
            w.i64_le(e.inserted_at);
            put_vec(w, e.value);
        }
    }
    return w.take();
}

Bytes section_rng(const Snapshot& s) {
    ByteWriter w;
    put_stream(w, s.augment);
    put_stream(w, s.model_stream);
    put_stream(w, s.eval_stream);
    return w.take();
}

Bytes section_manifest(const Snapshot& s) {
    std::string text = "root_seed=" + hex_u64(s.manifest.root_seed) + "\n";
    for (const auto& [name, rec] : s.manifest.streams) {
        text += name + "=" + hex_u64(rec.derived_seed) + ",draws=" +
                std::to_string(rec.draws_consumed) + "\n";
    }
    return Bytes(text.begin(), text.end());
}

using SectionFn = Bytes (*)(const Snapshot&);

const std::vector<std::pair<std::string, SectionFn>>& section_table() {
    static const std::vector<std::pair<std::string, SectionFn>> table = {
        {"meta", section_meta},         {"schedule", section_schedule},
        {"params", section_params},     {"optimizer", section_optimizer},
        {"ema", section_ema},           {"swa", section_swa},
        {"teacher", section_teacher},   {"bn", section_bn},
        {"sampler", section_sampler},   {"queue", section_queue},
        {"rng", section_rng},           {"manifest", section_manifest},
    };
    return table;
}

Bytes build_section(const Snapshot& s, const std::string& name) {
    for (const auto& [n, fn] : section_table()) {
        if (n == name) return fn(s);
    }
    throw ValidationError("unknown snapshot component: " + name);
}

}  // namespace

void StatePolicy::validate() const {
    if (ema == PolicyAction::rewarm || swa == PolicyAction::rewarm ||
        teacher == PolicyAction::rewarm || bn == PolicyAction::rewarm ||
        queue == PolicyAction::rewarm) {
        throw ValidationError("rewarm is only valid for the optimizer component");
    }
    if (optimizer == PolicyAction::rewarm && rewarm_len <= 0) {
        throw ValidationError("rewarm requires a positive warmup length");
    }
}

bool StatePolicy::all_carry() const {
    return optimizer == PolicyAction::carry && ema == PolicyAction::carry &&
           swa == PolicyAction::carry && teacher == PolicyAction::carry &&
           bn == PolicyAction::carry && queue == PolicyAction::carry;
}

std::vector<std::string> StatePolicy::touched_components() const {
    std::vector<std::string> out;
    if (optimizer != PolicyAction::carry) out.push_back("optimizer");
    if (optimizer == PolicyAction::rewarm) out.push_back("schedule");
    if (ema != PolicyAction::carry) out.push_back("ema");
    if (swa != PolicyAction::carry) out.push_back("swa");
    if (teacher != PolicyAction::carry) out.push_back("teacher");
    if (bn != PolicyAction::carry) out.push_back("bn");
    if (queue != PolicyAction::carry) out.push_back("queue");
    return out;
}

Snapshot apply_policy(const Snapshot& s, const StatePolicy& policy) {
    policy.validate();
    Snapshot out = s;
    if (policy.optimizer != PolicyAction::carry) {
        out.opt = reset_optimizer(out.opt);
        if (policy.optimizer == PolicyAction::rewarm) {
            out.schedule.rewarm_at = s.step;
            out.schedule.rewarm_len = policy.rewarm_len;
        }
    }
    if (policy.ema == PolicyAction::reset && out.avg.ema) {
        out.avg.ema->weights = out.params.values;
        out.avg.ema->frozen = false;
    }
    if (policy.teacher == PolicyAction::reset && out.avg.teacher) {
        out.avg.teacher->weights = out.params.values;
    }
    if (policy.swa == PolicyAction::reset && out.avg.swa) {
        out.avg.swa->sum.setZero();
        out.avg.swa->count = 0;
    }
    if (policy.bn == PolicyAction::reset) {
        for (auto& layer : out.norm.layers) {
            layer.running_mean.setZero();
            layer.running_var.setOnes();
        }
    }
    if (policy.queue == PolicyAction::reset && out.queue) {
        out.queue->entries.clear();
        out.queue->frozen = false;
    }
    return out;
}

std::vector<std::string> component_names() {
    std::vector<std::string> names;
    names.reserve(section_table().size());
    for (const auto& [n, fn] : section_table()) names.push_back(n);
    return names;
}

ComponentChecksum component_checksum(const Snapshot& s, const std::string& component) {
    ComponentChecksum c;
    c.digest = sha256_hex(build_section(s, component));
    if (component == "params") {
        c.norms["theta"] = s.params.values.norm();
    } else if (component == "optimizer") {
        if (const auto* sgd = std::get_if<SgdMomentum>(&s.opt.state)) {
            c.norms["velocity"] = sgd->velocity.norm();
        } else {
            const auto& a = std::get<AdamW>(s.opt.state);
            c.norms["m"] = a.m.norm();
            c.norms["v"] = a.v.norm();
        }
    } else if (component == "ema" && s.avg.ema) {
        c.norms["ema"] = s.avg.ema->weights.norm();
    } else if (component == "swa" && s.avg.swa) {
        c.norms["swa_sum"] = s.avg.swa->sum.norm();
    } else if (component == "teacher" && s.avg.teacher) {
        c.norms["teacher"] = s.avg.teacher->weights.norm();
    } else if (component == "bn") {
        double mean_sq = 0.0;
        double var_sq = 0.0;
        for (const auto& layer : s.norm.layers) {
            mean_sq += layer.running_mean.squaredNorm();
            var_sq += layer.running_var.squaredNorm();
        }
        c.norms["bn_mean"] = std::sqrt(mean_sq);
        c.norms["bn_var"] = std::sqrt(var_sq);
    } else if (component == "queue" && s.queue) {
        double sq = 0.0;
        for (const auto& e : s.queue->entries) sq += e.value.squaredNorm();
        c.norms["queue"] = std::sqrt(sq);
        c.norms["queue_size"] = static_cast<double>(s.queue->entries.size());
    }
    return c;
}

std::map<std::string, std::string> all_component_digests(const Snapshot& s) {
    std::map<std::string, std::string> out;
    for (const auto& name : component_names()) {
        out[name] = sha256_hex(build_section(s, name));
    }
    return out;
}

Bytes serialize_snapshot(const Snapshot& s) {
    ByteWriter w;
    w.raw(kSnapshotMagic, 8);
    w.u32_le(kSnapshotVersion);
    w.u32_le(static_cast<std::uint32_t>(section_table().size()));
    for (const auto& [name, fn] : section_table()) {
        const Bytes payload = fn(s);
        w.str(name);
        w.u64_le(payload.size());
        w.bytes(payload);
        const Digest d = sha256(payload);
        w.raw(d.data(), d.size());
    }
    const Digest file_digest = sha256(w.data());
    w.raw(file_digest.data(), file_digest.size());
    return w.take();
}

Snapshot parse_snapshot(const Bytes& bytes) {
    if (bytes.size() < 48) throw ParseError("snapshot too small");
    Digest stored{};
    std::copy(bytes.end() - 32, bytes.end(), stored.begin());
    if (sha256(bytes.data(), bytes.size() - 32) != stored) {
        throw VerificationError("snapshot file checksum mismatch");
    }
    ByteReader r(bytes.data(), bytes.size() - 32);
    const Bytes magic = r.raw(8);
    if (std::string(magic.begin(), magic.end()) != kSnapshotMagic) {
        throw ParseError("bad snapshot magic");
    }
    if (r.u32_le() != kSnapshotVersion) throw VerificationError("snapshot version mismatch");
    const std::uint32_t n_sections = r.u32_le();

    std::map<std::string, Bytes> sections;
    for (std::uint32_t i = 0; i < n_sections; ++i) {
        const std::string name = r.str();
        const std::uint64_t len = r.u64_le();
        Bytes payload = r.raw(len);
        Digest d{};
        const Bytes dh = r.raw(32);
        std::copy(dh.begin(), dh.end(), d.begin());
        if (sha256(payload) != d) {
            throw VerificationError("snapshot section checksum mismatch: " + name);
        }
        sections.emplace(name, std::move(payload));
    }
    if (!r.done()) throw ParseError("trailing bytes in snapshot");

    auto need = [&](const std::string& name) -> const Bytes& {
        auto it = sections.find(name);
        if (it == sections.end()) throw ParseError("snapshot missing section: " + name);
        return it->second;
    };

    Snapshot s;
    {
        ByteReader m(need("meta"));
        if (m.u64_le() != kSnapshotVersion) throw VerificationError("snapshot version mismatch");
        s.step = m.i64_le();
    }
    {
        ByteReader m(need("schedule"));
        s.schedule.base_lr = m.f64_le();
        s.schedule.warmup_steps = m.i64_le();
        s.schedule.kind = static_cast<Schedule::Kind>(m.u32_le());
        s.schedule.total_steps = m.i64_le();
        s.schedule.rewarm_at = m.i64_le();
        s.schedule.rewarm_len = m.i64_le();
        s.schedule_pos = m.i64_le();
    }
    {
        ByteReader m(need("params"));
        const std::uint32_t n_segs = m.u32_le();
        std::vector<SegmentInfo> segs;
        segs.reserve(n_segs);
        for (std::uint32_t i = 0; i < n_segs; ++i) {
            SegmentInfo seg;
            seg.name = m.str();
            seg.offset = m.u64_le();
            seg.length = m.u64_le();
            segs.push_back(std::move(seg));
        }
        s.params.layout = std::make_shared<const ParamLayout>(std::move(segs));
        s.params.values = get_vec(m);
    }
    {
        ByteReader m(need("optimizer"));
        s.opt.step_count = m.i64_le();
        const std::uint32_t kind = m.u32_le();
        const Eigen::Index total = s.params.size();
        if (kind == 0) {
            SgdMomentum sgd;
            sgd.beta = m.f64_le();
            sgd.velocity = get_segmented(m, total);
            s.opt.state = std::move(sgd);
        } else {
            AdamW a;
            a.beta1 = m.f64_le();
            a.beta2 = m.f64_le();
            a.eps = m.f64_le();
            a.weight_decay = m.f64_le();
            a.m = get_segmented(m, total);
            a.v = get_segmented(m, total);
            s.opt.state = std::move(a);
        }
    }
    {
        ByteReader m(need("ema"));
        if (m.u8() != 0) {
            EmaState e;
            e.alpha = m.f64_le();
            e.frozen = m.u8() != 0;
            e.weights = get_vec(m);
            s.avg.ema = std::move(e);
        }
    }
    {
        ByteReader m(need("swa"));
        if (m.u8() != 0) {
            SwaState sw;
            sw.count = m.i64_le();
            sw.sum = get_vec(m);
            s.avg.swa = std::move(sw);
        }
    }
    {
        ByteReader m(need("teacher"));
        if (m.u8() != 0) {
            TeacherState t;
            t.alpha = m.f64_le();
            t.weights = get_vec(m);
            s.avg.teacher = std::move(t);
        }
    }
    {
        ByteReader m(need("bn"));
        s.norm.rho = m.f64_le();
        const std::uint32_t n_layers = m.u32_le();
        for (std::uint32_t i = 0; i < n_layers; ++i) {
            LayerNormStats layer;
            layer.running_mean = get_vec(m);
            layer.running_var = get_vec(m);
            s.norm.layers.push_back(std::move(layer));
        }
    }
    {
        ByteReader m(need("sampler"));
        s.sampler.policy.kind = static_cast<SamplerKind>(m.u32_le());
        s.sampler.policy.batch_size = static_cast<int>(m.u32_le());
        s.sampler.policy.priorities = get_vec(m);
        s.sampler.policy.renormalize_every = m.i64_le();
        s.sampler.n = m.i64_le();
        s.sampler.epoch = m.i64_le();
        s.sampler.cursor = m.i64_le();
        s.sampler.batches_drawn = m.i64_le();
        const std::uint64_t n_perm = m.u64_le();
        s.sampler.permutation.resize(n_perm);
        for (auto& id : s.sampler.permutation) id = m.u32_le();
        s.sampler.live_priorities = get_vec(m);
        s.sampler.stream = get_stream(m);
    }
    {
        ByteReader m(need("queue"));
        if (m.u8() != 0) {
            QueueState q;
            q.capacity = m.i64_le();
            q.frozen = m.u8() != 0;
            const std::uint32_t n_entries = m.u32_le();
            for (std::uint32_t i = 0; i < n_entries; ++i) {
                QueueEntry e;
                e.inserted_at = m.i64_le();
                e.value = get_vec(m);
                q.entries.push_back(std::move(e));
            }
            s.queue = std::move(q);
        }
    }
    {
        ByteReader m(need("rng"));
        s.augment = get_stream(m);
        s.model_stream = get_stream(m);
        s.eval_stream = get_stream(m);
    }
    {
        const Bytes& mb = need("manifest");
        const std::string text(mb.begin(), mb.end());
        std::size_t pos = 0;
        while (pos < text.size()) {
            std::size_t eol = text.find('\n', pos);
            if (eol == std::string::npos) eol = text.size();
            const std::string line = text.substr(pos, eol - pos);
            pos = eol + 1;
            if (line.empty()) continue;
            const std::size_t eq = line.find('=');
            if (eq == std::string::npos) throw ParseError("bad manifest line: " + line);
            const std::string key = line.substr(0, eq);
            const std::string rest = line.substr(eq + 1);
            if (key == "root_seed") {
                s.manifest.root_seed = std::stoull(rest, nullptr, 16);
            } else {
                const std::size_t comma = rest.find(",draws=");
                if (comma == std::string::npos) throw ParseError("bad manifest line: " + line);
                StreamRecord rec;
                rec.derived_seed = std::stoull(rest.substr(0, comma), nullptr, 16);
                rec.draws_consumed = std::stoull(rest.substr(comma + 7));
                s.manifest.streams.emplace(key, rec);
            }
        }
    }
    return s;
}

void save_snapshot(const Snapshot& s, const std::string& path) {
    const Bytes b = serialize_snapshot(s);
    std::ofstream f(path, std::ios::binary);
    if (!f) throw Error("cannot open for write: " + path);
    f.write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
}

Snapshot load_snapshot(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw Error("cannot open: " + path);
    Bytes b((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return parse_snapshot(b);
}

const char* to_string(PolicyAction action) {
    switch (action) {
        case PolicyAction::carry: return "carry";
        case PolicyAction::reset: return "reset";
        case PolicyAction::rewarm: return "rewarm";
    }
    return "?";
}

PolicyAction policy_action_from_string(const std::string& s) {
    if (s == "carry") return PolicyAction::carry;
    if (s == "reset") return PolicyAction::reset;
    if (s == "rewarm") return PolicyAction::rewarm;
    throw ValidationError("unknown policy action: " + s);
}

}  // namespace memh
