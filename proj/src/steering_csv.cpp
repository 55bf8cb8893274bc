#include "saesteer/steering_csv.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "saesteer/errors.hpp"

namespace saesteer {

namespace {

const std::vector<std::string> kRequiredColumns = {"sae_release", "sae_id", "latent_idx", "steering_coefficient"};
const std::set<std::string> kKnownColumns = {"sae_release", "sae_id",      "latent_idx", "steering_coefficient",
                                             "hook_action", "clamp_value", "refusal_id", "description",
                                             "url"};

// RFC-style CSV record reader: handles quoted fields containing commas,
// escaped quotes ("") and embedded newlines. Returns one vector of fields
// per record.
std::vector<std::vector<std::string>> read_records(std::string_view text) {
    std::vector<std::vector<std::string>> records;
    std::vector<std::string> fields;
    std::string field;
    bool in_quotes = false;
    bool field_started = false;

    const auto end_field = [&] {
        fields.push_back(std::move(field));
        field.clear();
        field_started = false;
    };
    const auto end_record = [&] {
        end_field();
        const bool blank = fields.size() == 1 && fields[0].empty();
        if (!blank) records.push_back(std::move(fields));
        fields.clear();
    };

    for (std::size_t i = 0; i < text.size(); ++i) {
        const char c = text[i];
        if (in_quotes) {
            if (c == '"') {
                if (i + 1 < text.size() && text[i + 1] == '"') {
                    field.push_back('"');
                    ++i;
                } else {
                    in_quotes = false;
                }
            } else {
                field.push_back(c);
            }
            continue;
        }
        switch (c) {
        case '"':
            in_quotes = true;
            field_started = true;
            break;
        case ',':
            end_field();
            break;
        case '\r':
            break;
        case '\n':
            end_record();
            break;
        default:
            field.push_back(c);
            field_started = true;
            break;
        }
    }
    if (in_quotes) throw format_error("unterminated quoted field at end of input");
    if (field_started || !field.empty() || !fields.empty()) end_record();
    return records;
}

std::string trim(const std::string& s) {
    std::size_t a = 0, b = s.size();
    while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
    while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
    return s.substr(a, b - a);
}

long long parse_int(const std::string& raw, const std::string& column, long long row) {
    const std::string s = trim(raw);
    long long value = 0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
    if (ec != std::errc() || ptr != s.data() + s.size())
        throw format_error("non-integer value '" + raw + "' in column " + column, row);
    return value;
}

double parse_real(const std::string& raw, const std::string& column, long long row) {
    const std::string s = trim(raw);
    double value = 0.0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
    if (ec != std::errc() || ptr != s.data() + s.size())
        throw format_error("non-numeric value '" + raw + "' in column " + column, row);
    return value;
}

// Shortest decimal representation that parses back to the same double.
std::string format_real(double v) {
    char buf[64];
    const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, ptr);
}

bool needs_quoting(const std::string& s) {
    return s.find_first_of(",\"\n\r") != std::string::npos;
}

std::string quote_field(const std::string& s) {
    if (!needs_quoting(s)) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += "\"\"";
        else out.push_back(c);
    }
    out.push_back('"');
    return out;
}

std::string field_value(const SteeringDocument& doc, std::size_t row, const std::string& column) {
    const SteeringRow& r = doc.rows[row];
    if (column == "sae_release") return r.sae_release;
    if (column == "sae_id") return r.sae_id;
    if (column == "latent_idx") return std::to_string(r.latent_idx);
    if (column == "steering_coefficient") return format_real(r.steering_coefficient);
    if (column == "hook_action") return to_string(r.hook_action);
    if (column == "clamp_value") return r.clamp_value ? format_real(*r.clamp_value) : "";
    if (column == "refusal_id") return r.refusal_id ? std::to_string(*r.refusal_id) : "";
    if (column == "description") return r.description;
    if (column == "url") return r.url;
    const auto& extras = doc.unknown_columns[row];
    const auto it = extras.find(column);
    return it == extras.end() ? "" : it->second;
}

} // namespace

SteeringDocument parse_steering_csv(std::string_view text) {
    const auto records = read_records(text);
    if (records.empty()) throw format_error("empty input: missing header row");

    SteeringDocument doc;
    for (const auto& name : records[0]) {
        std::string normalized = trim(name);
        if (normalized == "refuse_id") normalized = "refusal_id"; // alias used by some published files
        doc.header.push_back(normalized);
    }
    for (const auto& required : kRequiredColumns)
        if (std::find(doc.header.begin(), doc.header.end(), required) == doc.header.end())
            throw format_error("missing required column: " + required);

    const bool has_action = std::find(doc.header.begin(), doc.header.end(), "hook_action") != doc.header.end();

    for (std::size_t rec = 1; rec < records.size(); ++rec) {
        const auto& fields = records[rec];
        const long long row_number = static_cast<long long>(rec); // 1-based data row
        if (fields.size() != doc.header.size())
            throw format_error("expected " + std::to_string(doc.header.size()) + " fields, got " +
                                   std::to_string(fields.size()),
                               row_number);

        SteeringRow row;
        std::map<std::string, std::string> extras;
        for (std::size_t c = 0; c < fields.size(); ++c) {
            const std::string& column = doc.header[c];
            const std::string& raw = fields[c];
            if (column == "sae_release") row.sae_release = raw;
            else if (column == "sae_id") row.sae_id = raw;
            else if (column == "latent_idx") row.latent_idx = static_cast<int>(parse_int(raw, column, row_number));
            else if (column == "steering_coefficient") row.steering_coefficient = parse_real(raw, column, row_number);
            else if (column == "hook_action") {
                const auto action = hook_action_from_string(trim(raw));
                if (!action) throw format_error("unknown hook_action '" + raw + "'", row_number);
                row.hook_action = *action;
            } else if (column == "clamp_value") {
                if (!trim(raw).empty()) row.clamp_value = parse_real(raw, column, row_number);
            } else if (column == "refusal_id") {
                if (!trim(raw).empty()) row.refusal_id = static_cast<int>(parse_int(raw, column, row_number));
            } else if (column == "description") row.description = raw;
            else if (column == "url") row.url = raw;
            else extras[column] = raw;
        }
        if (!has_action) row.hook_action = HookAction::clamp; // format default

        if (row.latent_idx < 0) throw validation_error("latent_idx must be non-negative (row " + std::to_string(row_number) + ")");
        if (row.hook_action == HookAction::clamp_cond && !row.clamp_value)
            throw validation_error("clamp_cond row lacking clamp_value (row " + std::to_string(row_number) + ")");
        if (row.hook_action == HookAction::clamp_refusal && (!row.clamp_value || !row.refusal_id))
            throw validation_error("clamp_refusal row lacking refusal_id or clamp_value (row " +
                                   std::to_string(row_number) + ")");

        doc.rows.push_back(std::move(row));
        doc.unknown_columns.push_back(std::move(extras));
    }
    return doc;
}

std::string write_steering_csv(const SteeringDocument& doc) {
    std::vector<std::string> header = doc.header;
    if (header.empty()) header = make_document(doc.rows).header;
    for (auto& name : header)
        if (name == "refuse_id") name = "refusal_id";

    std::string out;
    for (std::size_t c = 0; c < header.size(); ++c) {
        if (c) out.push_back(',');
        out += quote_field(header[c]);
    }
    out.push_back('\n');

    for (std::size_t r = 0; r < doc.rows.size(); ++r) {
        for (std::size_t c = 0; c < header.size(); ++c) {
            if (c) out.push_back(',');
            out += quote_field(field_value(doc, r, header[c]));
        }
        out.push_back('\n');
    }
    return out;
}

SteeringDocument make_document(std::vector<SteeringRow> rows) {
    SteeringDocument doc;
    doc.header = {"latent_idx", "hook_action"};
    const bool any_refusal = std::any_of(rows.begin(), rows.end(), [](const SteeringRow& r) { return r.refusal_id.has_value(); });
    const bool any_clamp_value = std::any_of(rows.begin(), rows.end(), [](const SteeringRow& r) { return r.clamp_value.has_value(); });
    const bool any_description = std::any_of(rows.begin(), rows.end(), [](const SteeringRow& r) { return !r.description.empty(); });
    const bool any_url = std::any_of(rows.begin(), rows.end(), [](const SteeringRow& r) { return !r.url.empty(); });
    if (any_refusal) doc.header.push_back("refusal_id");
    if (any_clamp_value) doc.header.push_back("clamp_value");
    doc.header.push_back("steering_coefficient");
    doc.header.push_back("sae_id");
    doc.header.push_back("sae_release");
    if (any_description) doc.header.push_back("description");
    if (any_url) doc.header.push_back("url");
    doc.unknown_columns.assign(rows.size(), {});
    doc.rows = std::move(rows);
    return doc;
}

ValidationReport validate_against_sae(const SteeringDocument& doc, const SparseAutoencoder& sae) {
    ValidationReport report;
    for (std::size_t i = 0; i < doc.rows.size(); ++i) {
        const SteeringRow& row = doc.rows[i];
        if (row.sae_release != sae.release || row.sae_id != sae.sae_id)
            report.findings.push_back({i, "provenance",
                                       "row references (" + row.sae_release + ", " + row.sae_id +
                                           "), loaded SAE is (" + sae.release + ", " + sae.sae_id + ")"});
        if (row.latent_idx >= sae.d_sae())
            report.findings.push_back({i, "latent_out_of_range",
                                       "latent_idx " + std::to_string(row.latent_idx) + " >= d_sae " +
                                           std::to_string(sae.d_sae())});
        if (row.refusal_id && *row.refusal_id >= sae.d_sae())
            report.findings.push_back({i, "refusal_out_of_range",
                                       "refusal_id " + std::to_string(*row.refusal_id) + " >= d_sae " +
                                           std::to_string(sae.d_sae())});
    }
    return report;
}

SteeringDocument load_steering_csv(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw format_error("cannot open steering csv: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_steering_csv(buf.str());
}

void save_steering_csv(const SteeringDocument& doc, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw format_error("cannot open steering csv for writing: " + path);
    out << write_steering_csv(doc);
}

} // namespace saesteer
