#pragma once

#include <map>
#include <string>
#include <vector>

#include "saesteer/sae.hpp"
#include "saesteer/steering.hpp"

namespace saesteer {

// A parsed Steering CSV. The header keeps source column order; unknown
// columns are preserved per row and survive round trips. "refuse_id" in a
// source header is accepted as an alias of "refusal_id" and normalized on
// write.
struct SteeringDocument {
    std::vector<std::string> header;
    std::vector<SteeringRow> rows;
    std::vector<std::map<std::string, std::string>> unknown_columns; // one map per row

    SteeringSpec spec() const { return SteeringSpec{rows}; }
};

// Required columns: sae_release, sae_id, latent_idx, steering_coefficient.
// Optional: hook_action (defaults to clamp when the column is absent),
// clamp_value, refusal_id / refuse_id. Auxiliary: description, url.
// Standard CSV quoting applies. Missing required columns, unknown
// hook_action values and non-numeric numeric fields raise format_error with
// the offending row; clamp_cond / clamp_refusal rows missing their optional
// arguments raise validation_error.
SteeringDocument parse_steering_csv(std::string_view text);

// Serializes in the document's header order (refuse_id normalized to
// refusal_id). Numbers use the shortest decimal form that round-trips.
// parse(write(doc)) reproduces doc field-for-field.
std::string write_steering_csv(const SteeringDocument& doc);

// Builds a document with a canonical header derived from the fields the
// rows actually use.
SteeringDocument make_document(std::vector<SteeringRow> rows);

struct ValidationFinding {
    std::size_t row = 0; // 0-based index into doc.rows
    std::string kind;    // "latent_out_of_range", "refusal_out_of_range", "provenance"
    std::string message;
};

struct ValidationReport {
    std::vector<ValidationFinding> findings;
    bool ok() const { return findings.empty(); }
};

// Report-style check of a document against a loaded SAE: flags rows whose
// (sae_release, sae_id) mismatch the SAE and rows whose latent_idx or
// refusal_id fall outside d_sae. Never throws.
ValidationReport validate_against_sae(const SteeringDocument& doc, const SparseAutoencoder& sae);

// File helpers.
SteeringDocument load_steering_csv(const std::string& path);
void save_steering_csv(const SteeringDocument& doc, const std::string& path);

} // namespace saesteer
