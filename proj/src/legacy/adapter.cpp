#include "fedehr/legacy/adapter.hpp"

#include "fedehr/error.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <limits>
#include <mutex>
#include <set>
#include <sstream>

namespace fedehr::legacy {

namespace {

constexpr std::string_view payload_prefix = "payload.";

bool is_identifier(std::string_view s) noexcept {
    return !s.empty() && std::all_of(s.begin(), s.end(), [](char c) {
        return std::isalnum(static_cast<unsigned char>(c)) || c == '_';
    });
}

bool is_date_format(std::string_view f) noexcept {
    return f == date_format::iso_minutes || f == date_format::dmy_minutes || f == date_format::epoch_seconds ||
           f == date_format::rfc3339;
}

std::string offset_text(int minutes) {
    if (minutes == 0) return "Z";
    int a = (minutes < 0 ? -minutes : minutes) % (24 * 60);
    char buf[16];
    std::snprintf(buf, sizeof buf, "%c%02d:%02d", minutes < 0 ? '-' : '+', a / 60, a % 60);
    return buf;
}

bool read_int(std::string_view s, std::size_t pos, std::size_t n, int& out) {
    if (pos + n > s.size()) return false;
    auto [p, ec] = std::from_chars(s.data() + pos, s.data() + pos + n, out);
    return ec == std::errc{} && p == s.data() + pos + n;
}

const type_coercion* find_coercion(const field_mapping& m, std::string_view unified) {
    auto it = std::find_if(m.type_coercions.begin(), m.type_coercions.end(),
                           [&](const type_coercion& c) { return c.field == unified; });
    return it == m.type_coercions.end() ? nullptr : &*it;
}

}  // namespace

bool is_unified_target(std::string_view name) noexcept {
    if (name.starts_with(payload_prefix)) return is_identifier(name.substr(payload_prefix.size()));
    return std::find(required_unified_fields.begin(), required_unified_fields.end(), name) !=
               required_unified_fields.end() ||
           name == "language";
}

void validate_mapping(const field_mapping& m) {
    if (!core::is_valid_hospital_id(m.hospital_id)) {
        throw error(error_kind::validation, "mapping hospital_id is invalid", m.hospital_id);
    }
    std::set<std::string, std::less<>> legacy_names;
    std::set<std::string, std::less<>> unified_names;
    for (const auto& e : m.entries) {
        if (e.legacy.empty()) throw error(error_kind::validation, "mapping entry has an empty legacy name");
        if (!is_unified_target(e.unified)) {
            throw error(error_kind::validation, "mapping targets a name outside the unified schema", e.unified);
        }
        if (!legacy_names.insert(e.legacy).second) {
            throw error(error_kind::validation, "duplicate legacy field in mapping", e.legacy);
        }
        if (!unified_names.insert(e.unified).second) {
            throw error(error_kind::validation, "two legacy fields map to the same unified field", e.unified);
        }
    }
    for (auto required : required_unified_fields) {
        if (!unified_names.contains(required)) {
            throw error(error_kind::validation, "mapping is missing required unified field", std::string(required));
        }
    }
    std::set<std::string, std::less<>> coerced;
    for (const auto& c : m.type_coercions) {
        if (!unified_names.contains(c.field)) {
            throw error(error_kind::validation, "coercion names a field the mapping does not produce", c.field);
        }
        if (!coerced.insert(c.field).second) {
            throw error(error_kind::validation, "more than one coercion for field", c.field);
        }
        bool ok = (c.to == date_format::rfc3339 && is_date_format(c.from) && c.field == "recorded_at") ||
                  (c.from == "string" && (c.to == "decimal" || c.to == "integer"));
        if (!ok) throw error(error_kind::validation, "unsupported coercion", c.field + ": " + c.from + " -> " + c.to);
    }
    if (m.utc_offset_minutes <= -24 * 60 || m.utc_offset_minutes >= 24 * 60) {
        throw error(error_kind::validation, "utc_offset out of range");
    }
}

json to_json(const field_mapping& m) {
    json entries = json::array();
    for (const auto& e : m.entries) entries.push_back({{"legacy", e.legacy}, {"unified", e.unified}});
    json coercions = json::array();
    for (const auto& c : m.type_coercions) coercions.push_back({{"field", c.field}, {"from", c.from}, {"to", c.to}});
    return json{{"hospital_id", m.hospital_id},
                {"entries", entries},
                {"type_coercions", coercions},
                {"utc_offset", offset_text(m.utc_offset_minutes)}};
}

field_mapping mapping_from_json(const json& doc) {
    try {
        field_mapping m;
        m.hospital_id = doc.at("hospital_id").get<std::string>();
        for (const auto& e : doc.at("entries")) {
            m.entries.push_back({e.at("legacy").get<std::string>(), e.at("unified").get<std::string>()});
        }
        if (auto it = doc.find("type_coercions"); it != doc.end()) {
            for (const auto& c : *it) {
                m.type_coercions.push_back(
                    {c.at("field").get<std::string>(), c.at("from").get<std::string>(), c.at("to").get<std::string>()});
            }
        }
        if (auto it = doc.find("utc_offset"); it != doc.end()) {
            auto off = parse_utc_offset(it->get<std::string>());
            if (!off) throw error(error_kind::validation, "utc_offset must look like +08:00");
            m.utc_offset_minutes = *off;
        }
        return m;
    } catch (const json::exception& e) {
        throw error(error_kind::validation, "malformed mapping document", e.what());
    }
}

field_mapping load_mapping_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw error(error_kind::storage, "cannot open mapping file", path.string());
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::exception& e) {
        throw error(error_kind::validation, "mapping file is not valid JSON", e.what());
    }
    return mapping_from_json(doc);
}

void save_mapping_file(const std::filesystem::path& path, const field_mapping& mapping) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw error(error_kind::storage, "cannot write mapping file", path.string());
    out << to_json(mapping).dump(2) << '\n';
}

mapping_registry::handle mapping_registry::register_mapping(field_mapping mapping) {
    validate_mapping(mapping);
    auto h = std::make_shared<const field_mapping>(std::move(mapping));
    std::unique_lock lock(mutex_);
    mappings_[h->hospital_id] = h;
    return h;
}

mapping_registry::handle mapping_registry::find(std::string_view hospital_id) const {
    std::shared_lock lock(mutex_);
    auto it = mappings_.find(hospital_id);
    return it == mappings_.end() ? nullptr : it->second;
}

std::size_t mapping_registry::size() const {
    std::shared_lock lock(mutex_);
    return mappings_.size();
}

std::vector<std::string> mapping_registry::hospitals() const {
    std::shared_lock lock(mutex_);
    std::vector<std::string> out;
    for (const auto& [id, _] : mappings_) out.push_back(id);
    return out;
}

json to_json(const legacy_record& r) {
    return json{{"document", r.document},
                {"modified_at", r.modified_at.to_rfc3339()},
                {"version", r.version},
                {"shared", r.shared}};
}

legacy_record legacy_record_from_json(const json& line, std::string_view hospital_id) {
    legacy_record r;
    r.hospital_id = std::string(hospital_id);
    for (const auto& [k, v] : line.at("document").items()) r.document[k] = v.get<std::string>();
    r.modified_at = timestamp::parse(line.at("modified_at").get<std::string>(), "modified_at");
    r.version = line.at("version").get<std::uint64_t>();
    r.shared = line.at("shared").get<bool>();
    return r;
}

flat_document rename_to_unified(const flat_document& document, const field_mapping& mapping) {
    flat_document out;
    for (const auto& [name, value] : document) {
        auto it = std::find_if(mapping.entries.begin(), mapping.entries.end(),
                               [&](const mapping_entry& e) { return e.legacy == name; });
        out[it == mapping.entries.end() ? name : it->unified] = value;
    }
    return out;
}

flat_document rename_to_legacy(const flat_document& document, const field_mapping& mapping) {
    flat_document out;
    for (const auto& [name, value] : document) {
        auto it = std::find_if(mapping.entries.begin(), mapping.entries.end(),
                               [&](const mapping_entry& e) { return e.unified == name; });
        out[it == mapping.entries.end() ? name : it->legacy] = value;
    }
    return out;
}

legacy_store::legacy_store(std::filesystem::path path, std::string hospital_id)
    : path_(std::move(path)), hospital_id_(std::move(hospital_id)) {}

std::vector<legacy_record> legacy_store::read_all() const {
    std::ifstream in(path_, std::ios::binary);
    if (!in) throw error(error_kind::storage, "cannot open legacy store", path_.string());
    std::vector<legacy_record> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        try {
            out.push_back(legacy_record_from_json(json::parse(line), hospital_id_));
        } catch (const std::exception& e) {
            throw error(error_kind::storage, "corrupt legacy store row",
                        path_.string() + ":" + std::to_string(line_no));
        }
    }
    return out;
}

void legacy_store::write_all(const std::vector<legacy_record>& records) const {
    if (path_.has_parent_path()) std::filesystem::create_directories(path_.parent_path());
    std::ofstream out(path_, std::ios::binary | std::ios::trunc);
    if (!out) throw error(error_kind::storage, "cannot write legacy store", path_.string());
    for (const auto& r : records) out << core::canonical_json(to_json(r)) << '\n';
    if (!out.flush()) throw error(error_kind::storage, "cannot write legacy store", path_.string());
}

std::vector<legacy_record> extract(const legacy_store& store, const timestamp& since) {
    std::vector<legacy_record> out;
    for (auto& r : store.read_all()) {
        if (r.shared && earlier(since, r.modified_at)) out.push_back(std::move(r));
    }
    std::stable_sort(out.begin(), out.end(),
                     [](const legacy_record& a, const legacy_record& b) { return earlier(a.modified_at, b.modified_at); });
    return out;
}

std::optional<timestamp> parse_legacy_date(std::string_view v, std::string_view format, int offset_minutes) {
    int y = 0, mo = 0, d = 0, h = 0, mi = 0;
    if (format == date_format::iso_minutes) {
        if (v.size() != 16 || v[4] != '-' || v[7] != '-' || v[10] != ' ' || v[13] != ':') return std::nullopt;
        if (!read_int(v, 0, 4, y) || !read_int(v, 5, 2, mo) || !read_int(v, 8, 2, d) || !read_int(v, 11, 2, h) ||
            !read_int(v, 14, 2, mi))
            return std::nullopt;
        return make_timestamp(y, mo, d, h, mi, 0, offset_minutes);
    }
    if (format == date_format::dmy_minutes) {
        if (v.size() != 16 || v[2] != '/' || v[5] != '/' || v[10] != ' ' || v[13] != ':') return std::nullopt;
        if (!read_int(v, 0, 2, d) || !read_int(v, 3, 2, mo) || !read_int(v, 6, 4, y) || !read_int(v, 11, 2, h) ||
            !read_int(v, 14, 2, mi))
            return std::nullopt;
        return make_timestamp(y, mo, d, h, mi, 0, offset_minutes);
    }
    if (format == date_format::epoch_seconds) {
        std::int64_t s = 0;
        auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), s);
        if (v.empty() || ec != std::errc{} || p != v.data() + v.size()) return std::nullopt;
        return timestamp{s, offset_minutes};
    }
    if (format == date_format::rfc3339) return timestamp::parse_rfc3339(v);
    return std::nullopt;
}

std::string format_legacy_date(const timestamp& ts, std::string_view format) {
    std::string iso = ts.to_rfc3339();  // YYYY-MM-DDTHH:MM:SS...
    if (format == date_format::iso_minutes) return iso.substr(0, 10) + " " + iso.substr(11, 5);
    if (format == date_format::dmy_minutes)
        return iso.substr(8, 2) + "/" + iso.substr(5, 2) + "/" + iso.substr(0, 4) + " " + iso.substr(11, 5);
    if (format == date_format::epoch_seconds) return std::to_string(ts.utc_seconds);
    return iso;
}

core::unified_ehr legacy_adapter::convert(const legacy_record& record) const {
    auto mapping = registry_.find(record.hospital_id);
    if (!mapping) throw error(error_kind::not_found, "no field mapping registered for hospital", record.hospital_id);

    for (const auto& [name, _] : record.document) {
        bool known = std::any_of(mapping->entries.begin(), mapping->entries.end(),
                                 [&](const mapping_entry& e) { return e.legacy == name; });
        if (!known) throw error(error_kind::validation, "legacy field has no mapping", name);
    }

    json doc = json::object();
    json payload = json::object();
    doc[core::field::hospital_id] = record.hospital_id;
    doc[core::field::language] = "en";
    doc[core::field::shared] = record.shared;

    for (const auto& entry : mapping->entries) {
        auto it = record.document.find(entry.legacy);
        if (it == record.document.end()) {
            bool required = std::find(required_unified_fields.begin(), required_unified_fields.end(),
                                      entry.unified) != required_unified_fields.end();
            if (required) throw error(error_kind::validation, "legacy field absent", entry.legacy);
            continue;
        }
        const std::string& raw = it->second;
        json value = raw;
        if (const auto* c = find_coercion(*mapping, entry.unified)) {
            if (c->to == date_format::rfc3339) {
                auto ts = parse_legacy_date(raw, c->from, mapping->utc_offset_minutes);
                if (!ts) throw error(error_kind::validation, "unparseable date", entry.legacy + "=" + raw);
                value = ts->to_rfc3339();
            } else if (c->to == "decimal") {
                double d = 0;
                auto [p, ec] = std::from_chars(raw.data(), raw.data() + raw.size(), d);
                if (raw.empty() || ec != std::errc{} || p != raw.data() + raw.size())
                    throw error(error_kind::validation, "not a decimal", entry.legacy);
                value = d;
            } else if (c->to == "integer") {
                long long n = 0;
                auto [p, ec] = std::from_chars(raw.data(), raw.data() + raw.size(), n);
                if (raw.empty() || ec != std::errc{} || p != raw.data() + raw.size())
                    throw error(error_kind::validation, "not an integer", entry.legacy);
                value = n;
            }
        }
        if (entry.unified == core::field::patient_id) {
            // The identity value goes no further than this hash.
            value = core::hash_patient_id(raw, federation_key_).digest();
        }
        std::string_view target = entry.unified;
        if (target.starts_with(payload_prefix)) {
            payload[std::string(target.substr(payload_prefix.size()))] = std::move(value);
        } else {
            doc[entry.unified] = std::move(value);
        }
    }
    doc[core::field::payload] = std::move(payload);
    return core::unified_from_json(doc);
}

std::uint64_t conversion_count(std::uint64_t n, conversion_mode mode) {
    if (mode == conversion_mode::unified) return n;
    if (n == 0) return 0;
    if (n - 1 > std::numeric_limits<std::uint64_t>::max() / n) {
        throw error(error_kind::validation, "hospital count too large for pairwise conversion count");
    }
    return n * (n - 1);
}

std::vector<std::pair<std::string, std::string>> pairwise_plan(const std::vector<std::string>& hospitals) {
    std::vector<std::pair<std::string, std::string>> plan;
    for (const auto& from : hospitals) {
        for (const auto& to : hospitals) {
            if (from != to) plan.emplace_back(from, to);
        }
    }
    return plan;
}

}  // namespace fedehr::legacy
