#include "fedehr/harness/fixture.hpp"

#include "fedehr/crypto.hpp"
#include "fedehr/error.hpp"

#include <algorithm>
#include <array>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>
#include <tuple>

namespace fedehr::harness {

namespace {

/// Unified targets every native profile provides, in column order.
constexpr std::array<std::string_view, 14> profile_targets = {
    "patient_id",
    "ehr_id",
    "patient_name",
    "doctor_name",
    "recorded_at",
    "ehr_type",
    "language",
    "payload.pre_weight_kg",
    "payload.post_weight_kg",
    "payload.systolic_mmHg",
    "payload.diastolic_mmHg",
    "payload.duration_min",
    "payload.dialyzer_model",
    "payload.notes",
};

struct native_profile {
    std::array<std::string_view, 14> columns;
    std::string_view date_format;
};

const native_profile hc_profile{{"card_id", "record_id", "p_name", "d_name", "rec_time", "rec_type", "lang", "pre_wt",
                                 "post_wt", "sys_bp", "dia_bp", "dur_min", "dialyzer", "note"},
                                legacy::date_format::iso_minutes};
const native_profile kw_profile{{"identitiy_id", "id_ehr", "patient_n", "dotctor_n", "data_hora", "tipo", "lingua",
                                 "peso_pre", "peso_pos", "pa_sist", "pa_diast", "duracao", "dialisador", "notas"},
                                legacy::date_format::dmy_minutes};
const native_profile uh_profile{{"id", "eid", "pname", "dname", "ts", "kind", "lang", "wpre", "wpost", "sbp", "dbp",
                                 "mins", "filter", "remark"},
                                legacy::date_format::epoch_seconds};
const native_profile generic_profile{profile_targets, legacy::date_format::rfc3339};

const native_profile& profile_for(std::string_view hospital) {
    if (hospital == "HC") return hc_profile;
    if (hospital == "KW") return kw_profile;
    if (hospital == "UH") return uh_profile;
    return generic_profile;
}

std::string_view column(const native_profile& p, std::string_view target) {
    for (std::size_t i = 0; i < profile_targets.size(); ++i) {
        if (profile_targets[i] == target) return p.columns[i];
    }
    throw error(error_kind::internal, "unknown profile target", std::string(target));
}

/// How each hospital writes the same national ID.
std::string spell_id(std::string_view hospital, const std::string& id) {
    if (hospital == "KW") {
        std::string s = id;
        std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
        return s.substr(0, s.size() - 1) + "-" + s.substr(s.size() - 1);
    }
    if (hospital == "UH") return id.substr(0, 1) + " " + id.substr(1, 3) + " " + id.substr(4);
    return id;
}

const std::array<std::string_view, 12> latin_surnames = {"Chan", "Wong",   "Lei", "Ho",  "Leong", "Lam",
                                                          "Cheong", "Ieong", "Sio", "Lou", "Tam",   "Kuok"};
const std::array<std::string_view, 12> latin_given = {"Wai Man", "Ka Ian",  "Mei Ling", "Chi Hou",
                                                       "Sou Ian", "Weng Kei", "Hoi Lam", "Kin Fai",
                                                       "Man Ieng", "Iok Lan", "Chon Kit", "Sut Mui"};
const std::array<std::string_view, 8> han_surnames = {"陳", "黃", "李", "何", "梁", "林", "張", "歐陽"};
const std::array<std::string_view, 8> han_given = {"大文", "美玲", "志豪", "嘉欣", "家明", "詠詩", "國強", "慧敏"};
const std::array<std::string_view, 6> doctors = {"Dr. Chan", "Dr. Wong", "Dr. Lei", "Dr. Ho", "Dr. Sousa", "Dr. Leong"};
const std::array<std::string_view, 4> dialyzers = {"FX80", "Polyflux 17L", "Rexeed-18", "Elisio-19H"};
const std::array<std::string_view, 5> notes = {"uneventful session", "cramping in final hour", "透析順利",
                                               "access site clean", "mild hypotension, saline given"};

constexpr int macau_offset = 8 * 60;

std::string hex_of(fixture_rng& rng, std::size_t bytes) {
    std::vector<std::uint8_t> b(bytes);
    for (auto& x : b) x = static_cast<std::uint8_t>(rng.below(256));
    return crypto::to_hex(b);
}

void write_text(const fs::path& file, const std::string& text) {
    fs::create_directories(file.parent_path());
    std::ofstream out(file, std::ios::binary | std::ios::trunc);
    if (!out) throw error(error_kind::storage, "cannot write fixture file", file.string());
    out << text;
    if (!out) throw error(error_kind::storage, "fixture write failed", file.string());
}

std::string read_text(const fs::path& file) {
    std::ifstream in(file, std::ios::binary);
    if (!in) throw error(error_kind::storage, "cannot read file", file.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

json read_json(const fs::path& file) {
    json j = json::parse(read_text(file), nullptr, false);
    if (j.is_discarded()) throw error(error_kind::validation, "not valid JSON", file.string());
    return j;
}

fs::path resolve(const fs::path& base, const std::string& p) {
    fs::path path(p);
    return path.is_absolute() ? path : base / path;
}

std::string relative_text(const fs::path& base, const fs::path& p) {
    if (base.empty() || !p.is_absolute()) return p.generic_string();
    auto rel = p.lexically_relative(base);
    return rel.empty() ? p.generic_string() : rel.generic_string();
}

std::string format_decimal(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.1f", v);
    return buf;
}

}  // namespace

std::uint64_t fixture_rng::below(std::uint64_t bound) {
    if (bound == 0) throw error(error_kind::internal, "empty sampling range");
    std::uint64_t threshold = (0 - bound) % bound;
    for (;;) {
        std::uint64_t r = engine_();
        if (r >= threshold) return r % bound;
    }
}

std::int64_t fixture_rng::between(std::int64_t lo, std::int64_t hi) {
    return lo + static_cast<std::int64_t>(below(static_cast<std::uint64_t>(hi - lo) + 1));
}

double fixture_rng::unit() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

const hospital_config& topology::hospital(std::string_view id) const {
    for (const auto& h : hospitals) {
        if (h.id == id) return h;
    }
    throw error(error_kind::not_found, "hospital not in topology", std::string(id));
}

std::vector<std::string> topology::hospital_ids() const {
    std::vector<std::string> out;
    for (const auto& h : hospitals) out.push_back(h.id);
    return out;
}

topology load_topology(const fs::path& file) {
    json j = read_json(file);
    fs::path base = fs::absolute(file).parent_path();
    try {
        topology t;
        t.base_dir = base;
        t.federation_key_file = resolve(base, j.at("federation_key_file").get<std::string>());
        t.sync_interval_seconds = j.value("sync_interval_seconds", std::int64_t{60});
        const json& ix = j.at("index");
        t.index.id = ix.at("id").get<std::string>();
        t.index.host = ix.value("host", std::string("127.0.0.1"));
        t.index.port = ix.at("port").get<int>();
        t.index.state_dir = resolve(base, ix.at("state_dir").get<std::string>());
        for (const auto& h : j.at("hospitals")) {
            hospital_config c;
            c.id = h.at("id").get<std::string>();
            c.host = h.value("host", std::string("127.0.0.1"));
            c.port = h.at("port").get<int>();
            c.signing_key_file = resolve(base, h.at("signing_key_file").get<std::string>());
            c.legacy_store = resolve(base, h.at("legacy_store").get<std::string>());
            c.mapping = resolve(base, h.at("mapping").get<std::string>());
            c.credentials = resolve(base, h.at("credentials").get<std::string>());
            c.state_dir = resolve(base, h.at("state_dir").get<std::string>());
            t.hospitals.push_back(std::move(c));
        }
        if (t.hospitals.empty()) throw error(error_kind::validation, "topology lists no hospitals");
        return t;
    } catch (const json::exception& e) {
        throw error(error_kind::validation, "malformed topology file", e.what());
    }
}

void save_topology(const fs::path& file, const topology& t) {
    const fs::path& b = t.base_dir;
    json hospitals = json::array();
    for (const auto& h : t.hospitals) {
        hospitals.push_back({{"id", h.id},
                             {"host", h.host},
                             {"port", h.port},
                             {"signing_key_file", relative_text(b, h.signing_key_file)},
                             {"legacy_store", relative_text(b, h.legacy_store)},
                             {"mapping", relative_text(b, h.mapping)},
                             {"credentials", relative_text(b, h.credentials)},
                             {"state_dir", relative_text(b, h.state_dir)}});
    }
    json j{{"federation_key_file", relative_text(b, t.federation_key_file)},
           {"sync_interval_seconds", t.sync_interval_seconds},
           {"index",
            {{"id", t.index.id},
             {"host", t.index.host},
             {"port", t.index.port},
             {"state_dir", relative_text(b, t.index.state_dir)}}},
           {"hospitals", hospitals}};
    write_text(file, j.dump(2) + "\n");
}

crypto::secret_key load_key_file(const fs::path& file) {
    std::string text = read_text(file);
    while (!text.empty() && std::isspace(static_cast<unsigned char>(text.back()))) text.pop_back();
    return crypto::secret_key::from_hex(text);
}

auth::key_ring load_key_ring(const topology& topo) {
    auth::key_ring ring;
    for (const auto& h : topo.hospitals) ring.add(h.id, load_key_file(h.signing_key_file));
    return ring;
}

const login_secret& secrets_file::find(std::string_view hospital, auth::role r) const {
    auto it = by_hospital.find(std::string(hospital));
    if (it != by_hospital.end()) {
        for (const auto& s : it->second) {
            if (s.doctor_role == r) return s;
        }
    }
    throw error(error_kind::not_found, "no fixture login with that role", std::string(hospital));
}

const login_secret& secrets_file::find_doctor(std::string_view hospital, std::string_view doctor_id) const {
    auto it = by_hospital.find(std::string(hospital));
    if (it != by_hospital.end()) {
        for (const auto& s : it->second) {
            if (s.doctor_id == doctor_id) return s;
        }
    }
    throw error(error_kind::not_found, "no fixture login for doctor", std::string(doctor_id));
}

secrets_file load_secrets(const fs::path& file) {
    json j = read_json(file);
    secrets_file out;
    try {
        for (const auto& [hospital, list] : j.items()) {
            for (const auto& s : list) {
                auto r = auth::parse_role(s.at("role").get<std::string>());
                if (!r) throw error(error_kind::validation, "unknown role in secrets file");
                out.by_hospital[hospital].push_back(
                    {s.at("doctor_id").get<std::string>(), s.at("secret").get<std::string>(), *r});
            }
        }
    } catch (const json::exception& e) {
        throw error(error_kind::validation, "malformed secrets file", e.what());
    }
    return out;
}

std::size_t manifest::record_count() const {
    std::size_t n = 0;
    for (const auto& p : patients) n += p.records.size();
    return n;
}

std::vector<index::index_entry> manifest::expected_entries() const {
    std::vector<index::index_entry> out;
    for (const auto& p : patients) {
        for (const auto& r : p.records) out.push_back({p.patient, r.ehr_id, r.type, r.recorded_at, r.hospital_id, 1});
    }
    std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
        return std::tie(a.location, a.ehr_id) < std::tie(b.location, b.ehr_id);
    });
    return out;
}

const manifest_patient* manifest::find_by_ref(const core::patient_ref& ref) const {
    for (const auto& p : patients) {
        if (p.patient == ref) return &p;
    }
    return nullptr;
}

namespace {

json to_json(const manifest& m) {
    json patients = json::array();
    for (const auto& p : m.patients) {
        json records = json::array();
        for (const auto& r : p.records) {
            records.push_back({{"hospital_id", r.hospital_id},
                               {"ehr_id", r.ehr_id},
                               {"ehr_type", core::to_string(r.type)},
                               {"recorded_at", r.recorded_at.to_rfc3339()}});
        }
        patients.push_back({{"number", p.number},
                            {"national_id", p.national_id},
                            {"name", p.name},
                            {"patient_ref", p.patient.digest()},
                            {"records", records}});
    }
    return json{{"rng_seed", m.rng_seed},
                {"hospitals", m.hospitals},
                {"raw_id_spellings", m.raw_id_spellings},
                {"record_count", m.record_count()},
                {"patients", patients}};
}

}  // namespace

manifest load_manifest(const fs::path& file) {
    json j = read_json(file);
    try {
        manifest m;
        m.rng_seed = j.at("rng_seed").get<std::uint64_t>();
        m.hospitals = j.at("hospitals").get<std::vector<std::string>>();
        m.raw_id_spellings = j.at("raw_id_spellings").get<std::vector<std::string>>();
        for (const auto& p : j.at("patients")) {
            manifest_patient mp;
            mp.number = p.at("number").get<std::size_t>();
            mp.national_id = p.at("national_id").get<std::string>();
            mp.name = p.at("name").get<std::string>();
            mp.patient = core::patient_ref::parse(p.at("patient_ref").get<std::string>());
            for (const auto& r : p.at("records")) {
                mp.records.push_back({r.at("hospital_id").get<std::string>(), r.at("ehr_id").get<std::string>(),
                                      core::ehr_type_from_string(r.at("ehr_type").get<std::string>()),
                                      timestamp::parse(r.at("recorded_at").get<std::string>())});
            }
            m.patients.push_back(std::move(mp));
        }
        return m;
    } catch (const json::exception& e) {
        throw error(error_kind::validation, "malformed manifest", e.what());
    }
}

legacy::field_mapping native_mapping(std::string_view hospital_id) {
    const auto& p = profile_for(hospital_id);
    legacy::field_mapping m;
    m.hospital_id = std::string(hospital_id);
    m.utc_offset_minutes = macau_offset;
    for (std::size_t i = 0; i < profile_targets.size(); ++i) {
        m.entries.push_back({std::string(p.columns[i]), std::string(profile_targets[i])});
    }
    m.type_coercions = {
        {"recorded_at", std::string(p.date_format), std::string(legacy::date_format::rfc3339)},
        {"payload.pre_weight_kg", "string", "decimal"},
        {"payload.post_weight_kg", "string", "decimal"},
        {"payload.systolic_mmHg", "string", "integer"},
        {"payload.diastolic_mmHg", "string", "integer"},
        {"payload.duration_min", "string", "integer"},
    };
    return m;
}

manifest seed(const fs::path& out_dir, const seed_options& o) {
    if (o.patients == 0) throw error(error_kind::validation, "patients must be at least 1");
    if (o.records < o.patients) throw error(error_kind::validation, "records must be at least patients");
    if (o.hospitals.empty()) throw error(error_kind::validation, "hospital list is empty");
    if (o.type_mix < 0 || o.type_mix > 1) throw error(error_kind::validation, "type_mix must lie in [0, 1]");
    std::set<std::string> unique;
    for (const auto& h : o.hospitals) {
        if (!core::is_valid_hospital_id(h)) throw error(error_kind::validation, "bad hospital id", h);
        if (!unique.insert(h).second) throw error(error_kind::validation, "duplicate hospital id", h);
    }
    if (o.patients > 9'000'000) throw error(error_kind::validation, "too many patients");

    fixture_rng rng(o.rng_seed);
    fs::create_directories(out_dir);

    auto federation_hex = hex_of(rng, 32);
    auto federation_key = crypto::secret_key::from_hex(federation_hex);
    write_text(out_dir / "keys" / "federation.key", federation_hex + "\n");

    manifest m;
    m.rng_seed = o.rng_seed;
    m.hospitals = o.hospitals;

    // Patients: distinct IDs, names, and the hospitals that hold their records.
    std::vector<std::vector<std::size_t>> holders(o.patients);
    std::set<std::string> used_ids;
    for (std::size_t i = 0; i < o.patients; ++i) {
        manifest_patient p;
        p.number = i;
        if (i == 0) {
            p.national_id = "M1234567";
            p.name = "Yang Yingying";
        } else {
            do {
                char letter = static_cast<char>('A' + rng.below(26));
                char buf[16];
                std::snprintf(buf, sizeof buf, "%c%07llu", letter, static_cast<unsigned long long>(rng.below(10000000)));
                p.national_id = buf;
            } while (used_ids.contains(p.national_id));
            if (rng.chance(0.3)) {
                p.name = std::string(han_surnames[rng.below(han_surnames.size())]) +
                         std::string(han_given[rng.below(han_given.size())]);
            } else {
                p.name = std::string(latin_surnames[rng.below(latin_surnames.size())]) + " " +
                         std::string(latin_given[rng.below(latin_given.size())]);
            }
        }
        used_ids.insert(p.national_id);
        p.patient = core::hash_patient_id(p.national_id, federation_key);

        std::vector<std::size_t> order(o.hospitals.size());
        for (std::size_t k = 0; k < order.size(); ++k) order[k] = k;
        for (std::size_t k = order.size(); k > 1; --k) std::swap(order[k - 1], order[rng.below(k)]);
        std::size_t count = order.size();
        if (i != 0 && order.size() > 1) count = rng.chance(0.2) ? 1 : 2 + rng.below(order.size() - 1);
        order.resize(count);
        std::sort(order.begin(), order.end());
        holders[i] = order;
        m.patients.push_back(std::move(p));
    }

    // Records, per hospital in generation order.
    struct pending {
        std::size_t patient;
        std::size_t hospital;
        manifest_record rec;
        legacy::flat_document doc;
        timestamp modified_at;
    };
    std::vector<pending> rows;
    const std::int64_t first_minute = make_timestamp(2010, 1, 1, 0, 0, 0, macau_offset)->utc_seconds / 60;
    const std::int64_t last_minute = make_timestamp(2016, 12, 31, 23, 59, 0, macau_offset)->utc_seconds / 60;
    std::vector<std::size_t> counters(o.hospitals.size(), 0);
    for (std::size_t i = 0; i < o.patients; ++i) {
        std::size_t n = o.records / o.patients + (i < o.records % o.patients ? 1 : 0);
        const auto& pat = m.patients[i];
        for (std::size_t k = 0; k < n; ++k) {
            std::size_t h = holders[i][rng.below(holders[i].size())];
            const std::string& hid = o.hospitals[h];
            const auto& prof = profile_for(hid);
            pending row;
            row.patient = i;
            row.hospital = h;
            row.rec.hospital_id = hid;
            char idbuf[24];
            std::snprintf(idbuf, sizeof idbuf, "%04zu", ++counters[h]);
            row.rec.ehr_id = idbuf;
            row.rec.type = core::ehr_type::hemodialysis;
            if (o.type_mix > 0 && rng.chance(o.type_mix)) row.rec.type = core::all_ehr_types[1 + rng.below(4)];
            row.rec.recorded_at = timestamp::from_utc_seconds(rng.between(first_minute, last_minute) * 60, macau_offset);

            auto& d = row.doc;
            d[std::string(column(prof, "patient_id"))] = spell_id(hid, pat.national_id);
            d[std::string(column(prof, "ehr_id"))] = row.rec.ehr_id;
            d[std::string(column(prof, "patient_name"))] = pat.name;
            d[std::string(column(prof, "doctor_name"))] = std::string(doctors[rng.below(doctors.size())]);
            d[std::string(column(prof, "ehr_type"))] = std::string(core::to_string(row.rec.type));
            bool han = !pat.name.empty() && static_cast<unsigned char>(pat.name[0]) >= 0x80;
            d[std::string(column(prof, "language"))] = han ? "zh" : "en";
            if (row.rec.type == core::ehr_type::hemodialysis) {
                double pre = 45.0 + static_cast<double>(rng.below(501)) / 10.0;
                double post = pre - static_cast<double>(5 + rng.below(36)) / 10.0;
                d[std::string(column(prof, "payload.pre_weight_kg"))] = format_decimal(pre);
                d[std::string(column(prof, "payload.post_weight_kg"))] = format_decimal(post);
                d[std::string(column(prof, "payload.systolic_mmHg"))] = std::to_string(rng.between(100, 180));
                d[std::string(column(prof, "payload.diastolic_mmHg"))] = std::to_string(rng.between(60, 100));
                d[std::string(column(prof, "payload.duration_min"))] = std::to_string(180 + 30 * rng.below(4));
                d[std::string(column(prof, "payload.dialyzer_model"))] =
                    std::string(dialyzers[rng.below(dialyzers.size())]);
            }
            d[std::string(column(prof, "payload.notes"))] = std::string(notes[rng.below(notes.size())]);
            row.modified_at = row.rec.recorded_at.plus_seconds(rng.between(3600, 48 * 3600));
            rows.push_back(std::move(row));
        }
    }

    // Pin the tracked record: KW 0221 belongs to patient 0 and is dated 2015-09-30.
    auto kw = std::find(o.hospitals.begin(), o.hospitals.end(), "KW");
    if (kw != o.hospitals.end()) {
        std::size_t h = static_cast<std::size_t>(kw - o.hospitals.begin());
        auto own = std::find_if(rows.begin(), rows.end(), [&](const pending& r) { return r.patient == 0 && r.hospital == h; });
        auto target = std::find_if(rows.begin(), rows.end(),
                                   [&](const pending& r) { return r.hospital == h && r.rec.ehr_id == "0221"; });
        if (own != rows.end() && target != rows.end()) {
            const auto& prof = profile_for("KW");
            std::swap(own->rec.ehr_id, target->rec.ehr_id);
            own->doc[std::string(column(prof, "ehr_id"))] = own->rec.ehr_id;
            target->doc[std::string(column(prof, "ehr_id"))] = target->rec.ehr_id;
            own->rec.recorded_at = *make_timestamp(2015, 9, 30, 10, 30, 0, macau_offset);
            own->modified_at = own->rec.recorded_at.plus_seconds(7200);
        }
    }

    std::vector<std::vector<legacy::legacy_record>> stores(o.hospitals.size());
    for (auto& row : rows) {
        const std::string& hid = o.hospitals[row.hospital];
        const auto& prof = profile_for(hid);
        row.doc[std::string(column(prof, "recorded_at"))] = legacy::format_legacy_date(row.rec.recorded_at, prof.date_format);
        stores[row.hospital].push_back({hid, row.doc, row.modified_at, 1, true});
        m.patients[row.patient].records.push_back(row.rec);
    }

    std::set<std::string> spellings;
    for (std::size_t i = 0; i < o.patients; ++i) {
        spellings.insert(m.patients[i].national_id);
        for (auto h : holders[i]) spellings.insert(spell_id(o.hospitals[h], m.patients[i].national_id));
    }
    m.raw_id_spellings.assign(spellings.begin(), spellings.end());

    topology topo;
    topo.base_dir = fs::absolute(out_dir);
    topo.federation_key_file = topo.base_dir / "keys" / "federation.key";
    topo.index.port = o.base_port;
    topo.index.state_dir = topo.base_dir / "state" / topo.index.id;

    json secrets = json::object();
    for (std::size_t h = 0; h < o.hospitals.size(); ++h) {
        const std::string& hid = o.hospitals[h];
        std::string lower = hid;
        std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });

        for (const char* sub : {"legacy", "mappings", "credentials"}) fs::create_directories(out_dir / sub);
        auto key_hex = hex_of(rng, 32);
        write_text(out_dir / "keys" / (hid + ".key"), key_hex + "\n");
        legacy::legacy_store(out_dir / "legacy" / (hid + ".jsonl"), hid).write_all(stores[h]);
        legacy::save_mapping_file(out_dir / "mappings" / (hid + ".json"), native_mapping(hid));

        std::vector<auth::credential> creds;
        json list = json::array();
        const std::array<std::pair<std::string, auth::role>, 3> people = {
            std::pair{lower + "-doc1", auth::role::doctor},
            std::pair{lower + "-doc2", auth::role::doctor},
            std::pair{lower + "-admin", auth::role::admin},
        };
        for (const auto& [id, r] : people) {
            auto salt = hex_of(rng, 8);
            auto secret = hex_of(rng, 10);
            creds.push_back(auth::make_credential(id, r, salt, secret));
            list.push_back({{"doctor_id", id}, {"secret", secret}, {"role", auth::to_string(r)}});
        }
        auth::credential_store(hid, creds).save(out_dir / "credentials" / (hid + ".json"));
        secrets[hid] = list;

        hospital_config c;
        c.id = hid;
        c.port = o.base_port == 0 ? 0 : o.base_port + 1 + static_cast<int>(h);
        c.signing_key_file = topo.base_dir / "keys" / (hid + ".key");
        c.legacy_store = topo.base_dir / "legacy" / (hid + ".jsonl");
        c.mapping = topo.base_dir / "mappings" / (hid + ".json");
        c.credentials = topo.base_dir / "credentials" / (hid + ".json");
        c.state_dir = topo.base_dir / "state" / hid;
        topo.hospitals.push_back(std::move(c));
    }
    write_text(out_dir / "secrets.json", secrets.dump(2) + "\n");
    write_text(out_dir / "manifest.json", to_json(m).dump(1) + "\n");
    save_topology(out_dir / "topology.json", topo);
    return m;
}

std::string directory_fingerprint(const fs::path& dir) {
    std::vector<std::pair<std::string, fs::path>> files;
    for (const auto& e : fs::recursive_directory_iterator(dir)) {
        if (e.is_regular_file()) files.emplace_back(e.path().lexically_relative(dir).generic_string(), e.path());
    }
    std::sort(files.begin(), files.end());
    std::string all;
    for (const auto& [rel, path] : files) {
        std::string body = read_text(path);
        all += rel;
        all.push_back('\0');
        all += std::to_string(body.size());
        all.push_back('\0');
        all += body;
    }
    return crypto::to_hex(crypto::sha256(all));
}

std::vector<index::locate_row> oracle_locate(const manifest& m, const index::locate_query& q) {
    std::vector<index::locate_row> out;
    const auto* p = m.find_by_ref(q.patient);
    if (p == nullptr) return out;
    std::set<core::ehr_type> types(q.types.begin(), q.types.end());
    std::set<std::string> hospitals(q.hospitals.begin(), q.hospitals.end());
    for (const auto& r : p->records) {
        std::int64_t t = r.recorded_at.utc_seconds;
        if (t < q.date_from.utc_seconds || t > q.date_to.utc_seconds) continue;
        if (!types.empty() && !types.contains(r.type)) continue;
        if (!hospitals.empty() && !hospitals.contains(r.hospital_id)) continue;
        out.push_back({r.ehr_id, r.type, r.recorded_at, r.hospital_id});
    }
    std::sort(out.begin(), out.end(), [](const index::locate_row& a, const index::locate_row& b) {
        return std::make_tuple(-a.recorded_at.utc_seconds, a.location, a.ehr_id) <
               std::make_tuple(-b.recorded_at.utc_seconds, b.location, b.ehr_id);
    });
    return out;
}

}  // namespace fedehr::harness
