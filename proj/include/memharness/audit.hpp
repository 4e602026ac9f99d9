// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "memharness/sha256.hpp"

namespace memh {

enum class RecordKind {
    order_hash,
    buffer_norms,
    bn_checksum,
    queue_fingerprint,
    ema_decay,
    policy_applied,
    stream_derived,
    branch_event,
};

const char* to_string(RecordKind kind);
RecordKind record_kind_from_string(const std::string& s);

using Fields = std::vector<std::pair<std::string, std::string>>;

struct AuditRecord {
    std::int64_t step = 0;
    std::int64_t seq = 0;
    RecordKind kind = RecordKind::branch_event;
    Fields fields;

    // "step=<t> seq=<i> kind=<kind> k1=v1 k2=v2 ..."; the bytes the hash
    // chain covers.
    std::string canonical_line() const;
};

// Append-only, hash-chained log. h_0 = SHA-256(empty stream);
// h_i = SHA-256(h_{i-1} || canonical bytes of record i).
class AuditTrail {
  public:
    AuditTrail() = default;
    explicit AuditTrail(std::string branch_name) : branch_(std::move(branch_name)) {}

    // Appends a record; steps must be monotone non-decreasing.
    void log(std::int64_t step, RecordKind kind, Fields fields);

    const std::string& branch() const { return branch_; }
    const std::vector<AuditRecord>& records() const { return records_; }
    std::string chain_hash_hex() const { return digest_hex(chain_); }

    // One "<canonical line>\t<chain hex>\n" per record.
    std::string to_text() const;
    void write(const std::string& path) const;

    // Parses and re-verifies the chain; throws VerificationError on tamper.
    static AuditTrail load_text(const std::string& text, const std::string& branch_name);
    static AuditTrail load(const std::string& path);

    // Records of a kind, in order.
    std::vector<const AuditRecord*> find(RecordKind kind) const;

  private:
    std::string branch_;
    std::vector<AuditRecord> records_;
    std::vector<std::string> chain_hex_;  // per record
    Digest chain_ = sha256("");
};

std::string field_value(const AuditRecord& record, const std::string& key);
bool has_field(const AuditRecord& record, const std::string& key);

// Experiment-level run manifest, written before step 0.
struct RunManifest {
    std::uint64_t root_seed = 0;
    bool root_seed_from_env = false;
    std::string config_digest;
    std::string substrate;
    std::vector<std::string> recipe_summary;               // "key=value" lines
    std::vector<std::pair<std::string, std::string>> streams;  // name -> seed hex

    std::string to_text() const;
    static RunManifest parse(const std::string& text);
    void write(const std::string& path) const;
    static RunManifest load(const std::string& path);
};

// Compiler/platform fingerprint recorded in the manifest (free text).
std::string substrate_note();

struct VerificationCheck {
    std::string name;
    bool pass = false;
    std::string detail;
};

struct VerificationReport {
    std::vector<VerificationCheck> checks;
    bool all_pass() const;
    std::string to_text() const;
};

// Post-hoc verification of a run directory: hash chains, order records,
// snapshot checksums, lockstep order-hash equality, isolation confinement,
// config digest. Missing artifacts fail their own check only.
VerificationReport verify_run(const std::string& run_dir);

// Memory-sensitive report (Table-style checklist document); a pure function
// of the run directory.
std::string emit_report(const std::string& run_dir);

}  // namespace memh
