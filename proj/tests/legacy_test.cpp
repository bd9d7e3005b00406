#include "fedehr/error.hpp"
#include "fedehr/harness/fixture.hpp"
#include "fedehr/legacy/adapter.hpp"

#include "support.hpp"

#include <gtest/gtest.h>

#include <random>
#include <thread>

namespace {

using namespace fedehr;
using legacy::field_mapping;
using legacy::mapping_entry;
using support::sequential_key;

field_mapping table1_hc() {
    field_mapping m;
    m.hospital_id = "HC";
    m.entries = {{"card_id", "patient_id"}, {"record_id", "ehr_id"}, {"p_name", "patient_name"}, {"d_name", "doctor_name"}};
    return m;
}

// The four Table 1 columns plus the date and type columns totality asks for.
field_mapping hc_with_extensions() {
    auto m = table1_hc();
    m.entries.push_back({"rec_time", "recorded_at"});
    m.entries.push_back({"rec_type", "ehr_type"});
    m.type_coercions = {{"recorded_at", std::string(legacy::date_format::iso_minutes), "rfc3339"}};
    return m;
}

legacy::legacy_record hc_row() {
    return {"HC",
            {{"card_id", "M1234567"},
             {"record_id", "0221"},
             {"p_name", "Yang Yingying"},
             {"d_name", "Dr. Chan"},
             {"rec_time", "2015-09-30 10:30"},
             {"rec_type", "lab_report"}},
            support::macau(2015, 9, 30, 12),
            1,
            true};
}

void expect_rejected(const field_mapping& m, const std::string& detail) {
    try {
        legacy::validate_mapping(m);
        FAIL() << "mapping accepted";
    } catch (const error& e) {
        EXPECT_EQ(e.kind(), error_kind::validation);
        EXPECT_EQ(e.detail(), detail) << e.what();
    }
}

TEST(Mapping, Table1ColumnsAloneAreNotTotal) {
    expect_rejected(table1_hc(), "recorded_at");
}

TEST(Mapping, Table1ColumnsWithDateAndTypeAccepted) {
    legacy::mapping_registry reg;
    auto h = reg.register_mapping(hc_with_extensions());
    ASSERT_TRUE(h);
    EXPECT_EQ(reg.find("HC")->entries.front(), (mapping_entry{"card_id", "patient_id"}));
}

TEST(Mapping, KwDoctorColumnSpellingKeptVerbatim) {
    field_mapping m;
    m.hospital_id = "KW";
    m.entries = {{"identitiy_id", "patient_id"}, {"id_ehr", "ehr_id"},      {"patient_n", "patient_name"},
                 {"dotctor_n", "doctor_name"},   {"data_hora", "recorded_at"}, {"tipo", "ehr_type"}};
    legacy::mapping_registry reg;
    reg.register_mapping(m);
    auto stored = reg.find("KW");
    EXPECT_TRUE(std::any_of(stored->entries.begin(), stored->entries.end(),
                            [](const mapping_entry& e) { return e.legacy == "dotctor_n" && e.unified == "doctor_name"; }));
    EXPECT_EQ(legacy::mapping_from_json(legacy::to_json(m)), m);
}

TEST(Mapping, MissingEhrIdTargetRejected) {
    auto m = hc_with_extensions();
    m.entries.erase(m.entries.begin() + 1);
    expect_rejected(m, "ehr_id");
}

TEST(Mapping, DuplicateLegacyFieldRejected) {
    auto m = hc_with_extensions();
    m.entries.push_back({"card_id", "payload.notes"});
    expect_rejected(m, "card_id");
}

TEST(Mapping, TargetOutsideSchemaRejected) {
    auto m = hc_with_extensions();
    m.entries.push_back({"ward", "ward_number"});
    expect_rejected(m, "ward_number");
}

TEST(Mapping, BadCoercionRejected) {
    auto m = hc_with_extensions();
    m.type_coercions.push_back({"ehr_id", "string", "date"});
    EXPECT_THROW(legacy::validate_mapping(m), error);
}

TEST(Mapping, FileRoundTrip) {
    support::scratch_dir dir("mapping");
    auto m = harness::native_mapping("UH");
    legacy::save_mapping_file(dir / "UH.json", m);
    EXPECT_EQ(legacy::load_mapping_file(dir / "UH.json"), m);
}

TEST(Registry, ReplacementIsAtomicUnderConcurrentReaders) {
    legacy::mapping_registry reg;
    reg.register_mapping(hc_with_extensions());
    std::atomic<bool> stop{false};
    std::atomic<int> torn{0};
    std::thread reader([&] {
        while (!stop) {
            auto h = reg.find("HC");
            if (!h || (h->entries.size() != 6 && h->entries.size() != 7)) ++torn;
        }
    });
    for (int i = 0; i < 2000; ++i) {
        auto m = hc_with_extensions();
        if (i % 2) m.entries.push_back({"note", "payload.notes"});
        reg.register_mapping(m);
    }
    stop = true;
    reader.join();
    EXPECT_EQ(torn, 0);
    EXPECT_EQ(reg.size(), 1u);
}

TEST(Convert, HcRecordYieldsDigestAndNames) {
    legacy::mapping_registry reg;
    reg.register_mapping(hc_with_extensions());
    legacy::legacy_adapter adapter(reg, sequential_key());
    auto u = adapter.convert(hc_row());
    EXPECT_EQ(u.patient.digest(), "e9b85900081771db4c051042fb2efc9e53b249a564c703b7e130bd0293eff802");
    EXPECT_EQ(u.ehr_id, "0221");
    EXPECT_EQ(u.patient_name, "Yang Yingying");
    EXPECT_EQ(u.doctor_name, "Dr. Chan");
    EXPECT_EQ(u.recorded_at.to_rfc3339(), "2015-09-30T10:30:00+08:00");
    EXPECT_TRUE(core::validate_unified(u).ok());
}

TEST(Convert, IdentityMappingKeepsValuesExceptPatientId) {
    field_mapping m;
    m.hospital_id = "PI";
    for (auto f : legacy::required_unified_fields) m.entries.push_back({std::string(f), std::string(f)});
    m.type_coercions = {{"recorded_at", "rfc3339", "rfc3339"}};
    legacy::mapping_registry reg;
    reg.register_mapping(m);
    legacy::legacy_adapter adapter(reg, sequential_key());
    legacy::legacy_record row{"PI",
                              {{"patient_id", "M1234567"},
                               {"ehr_id", "7"},
                               {"patient_name", "陳大文"},
                               {"doctor_name", "Dr. Ho"},
                               {"recorded_at", "2014-01-02T03:04:05+08:00"},
                               {"ehr_type", "radiology_image"}},
                              {},
                              1,
                              true};
    auto u = adapter.convert(row);
    EXPECT_EQ(u.patient, core::hash_patient_id("M1234567", sequential_key()));
    EXPECT_EQ(u.ehr_id, "7");
    EXPECT_EQ(u.patient_name, "陳大文");
    EXPECT_EQ(u.doctor_name, "Dr. Ho");
    EXPECT_EQ(u.recorded_at.to_rfc3339(), "2014-01-02T03:04:05+08:00");
    EXPECT_EQ(u.type, core::ehr_type::radiology_image);
}

TEST(Convert, SeededKwRecordMatchesHandBuiltRecord) {
    legacy::mapping_registry reg;
    reg.register_mapping(harness::native_mapping("KW"));
    legacy::legacy_adapter adapter(reg, sequential_key());
    legacy::legacy_record row{"KW",
                              {{"identitiy_id", "m123456-7"},
                               {"id_ehr", "0221"},
                               {"patient_n", "Yang Yingying"},
                               {"dotctor_n", "Dr. Sousa"},
                               {"data_hora", "30/09/2015 10:30"},
                               {"tipo", "hemodialysis"},
                               {"lingua", "en"},
                               {"peso_pre", "62.4"},
                               {"peso_pos", "60.1"},
                               {"pa_sist", "138"},
                               {"pa_diast", "82"},
                               {"duracao", "240"},
                               {"dialisador", "FX80"},
                               {"notas", "透析順利"}},
                              support::macau(2015, 9, 30, 12, 30),
                              1,
                              true};

    core::unified_ehr expected;
    expected.hospital_id = "KW";
    expected.ehr_id = "0221";
    expected.patient = core::patient_ref::parse("e9b85900081771db4c051042fb2efc9e53b249a564c703b7e130bd0293eff802");
    expected.patient_name = "Yang Yingying";
    expected.doctor_name = "Dr. Sousa";
    expected.type = core::ehr_type::hemodialysis;
    expected.recorded_at = timestamp{1443580200, 480};
    expected.language = "en";
    expected.payload = core::json{{"pre_weight_kg", 62.4},   {"post_weight_kg", 60.1}, {"systolic_mmHg", 138},
                                  {"diastolic_mmHg", 82},    {"duration_min", 240},    {"dialyzer_model", "FX80"},
                                  {"notes", "透析順利"}};
    expected.shared = true;
    EXPECT_EQ(adapter.convert(row), expected);
}

TEST(Convert, Errors) {
    legacy::mapping_registry reg;
    reg.register_mapping(hc_with_extensions());
    legacy::legacy_adapter adapter(reg, sequential_key());

    auto row = hc_row();
    row.hospital_id = "ZZ";
    try {
        adapter.convert(row);
        FAIL();
    } catch (const error& e) {
        EXPECT_EQ(e.kind(), error_kind::not_found);
    }

    row = hc_row();
    row.document.erase("record_id");
    EXPECT_THROW(adapter.convert(row), error);

    row = hc_row();
    row.document["rec_time"] = "30/09/2015 10:30";
    EXPECT_THROW(adapter.convert(row), error);

    row = hc_row();
    row.document["rec_time"] = "2015-02-30 10:30";
    EXPECT_THROW(adapter.convert(row), error);

    row = hc_row();
    row.document["ward"] = "7B";
    EXPECT_THROW(adapter.convert(row), error);
}

TEST(Convert, NeverEmitsRawIdentityValue) {
    support::scratch_dir dir("noraw");
    harness::seed_options o;
    o.patients = 40;
    o.records = 600;
    o.type_mix = 0.3;
    auto m = harness::seed(dir.path(), o);
    auto topo = harness::load_topology(dir / "topology.json");
    auto key = harness::load_key_file(topo.federation_key_file);
    legacy::mapping_registry reg;
    for (const auto& h : topo.hospitals) reg.register_mapping(legacy::load_mapping_file(h.mapping));
    legacy::legacy_adapter adapter(reg, key);
    std::size_t checked = 0;
    for (const auto& h : topo.hospitals) {
        for (const auto& row : legacy::legacy_store(h.legacy_store, h.id).read_all()) {
            auto bytes = core::canonical_serialize(adapter.convert(row));
            for (const auto& [name, value] : row.document) {
                if (name == std::string(harness::native_mapping(h.id).entries.front().legacy)) {
                    ASSERT_EQ(bytes.find(value), std::string::npos) << value;
                    ASSERT_EQ(bytes.find(core::normalize_national_id(value)), std::string::npos);
                }
            }
            ++checked;
        }
    }
    EXPECT_EQ(checked, m.record_count());
}

TEST(Rename, RoundTripRestoresLegacyNames) {
    std::mt19937_64 rng(11);
    for (const char* h : {"HC", "KW", "UH"}) {
        auto m = harness::native_mapping(h);
        for (int i = 0; i < 200; ++i) {
            legacy::flat_document doc;
            for (const auto& e : m.entries) {
                if (rng() % 3 != 0) doc[e.legacy] = std::to_string(rng());
            }
            doc["unmapped_" + std::to_string(i)] = "x";
            auto unified = legacy::rename_to_unified(doc, m);
            EXPECT_EQ(legacy::rename_to_legacy(unified, m), doc);
            for (const auto& [name, _] : unified) {
                EXPECT_TRUE(name.starts_with("unmapped_") || legacy::is_unified_target(name)) << name;
            }
        }
    }
}

TEST(Extract, EpochReturnsAllSharedAndMaxReturnsNone) {
    support::scratch_dir dir("extract");
    legacy::legacy_store store(dir / "HC.jsonl", "HC");
    std::vector<legacy::legacy_record> rows;
    for (int i = 0; i < 10; ++i) {
        auto r = hc_row();
        r.document["record_id"] = std::to_string(i);
        r.modified_at = support::macau(2015, 1, 1).plus_seconds(i * 60);
        r.shared = i != 3;
        rows.push_back(r);
    }
    store.write_all(rows);
    EXPECT_EQ(legacy::extract(store, timestamp::epoch()).size(), 9u);
    EXPECT_TRUE(legacy::extract(store, rows.back().modified_at).empty());
}

TEST(Extract, ReturnsRowsModifiedAfterSinceInModificationOrder) {
    support::scratch_dir dir("extract");
    legacy::legacy_store store(dir / "HC.jsonl", "HC");
    const auto t = support::macau(2015, 6, 1);
    // File order deliberately differs from modification order.
    const std::array<std::int64_t, 10> offsets = {-50, 400, -10, 100, -300, 250, -1, 0, 30, -2000};
    std::vector<legacy::legacy_record> rows;
    for (std::size_t i = 0; i < offsets.size(); ++i) {
        auto r = hc_row();
        r.document["record_id"] = "r" + std::to_string(i);
        r.modified_at = t.plus_seconds(offsets[i]);
        rows.push_back(r);
    }
    store.write_all(rows);
    auto got = legacy::extract(store, t);
    std::vector<std::string> ids;
    for (const auto& r : got) ids.push_back(r.document.at("record_id"));
    EXPECT_EQ(ids, (std::vector<std::string>{"r8", "r3", "r5", "r1"}));
}

TEST(Extract, UnreadableStoreIsStorageError) {
    legacy::legacy_store store("/nonexistent/dir/HC.jsonl", "HC");
    try {
        legacy::extract(store, timestamp::epoch());
        FAIL();
    } catch (const error& e) {
        EXPECT_EQ(e.kind(), error_kind::storage);
    }
}

TEST(LegacyDates, FormatsRoundTrip) {
    auto t = support::macau(2015, 9, 30, 10, 30);
    EXPECT_EQ(legacy::format_legacy_date(t, legacy::date_format::iso_minutes), "2015-09-30 10:30");
    EXPECT_EQ(legacy::format_legacy_date(t, legacy::date_format::dmy_minutes), "30/09/2015 10:30");
    EXPECT_EQ(legacy::format_legacy_date(t, legacy::date_format::epoch_seconds), "1443580200");
    for (auto f : {legacy::date_format::iso_minutes, legacy::date_format::dmy_minutes,
                   legacy::date_format::epoch_seconds, legacy::date_format::rfc3339}) {
        auto back = legacy::parse_legacy_date(legacy::format_legacy_date(t, f), f, 480);
        ASSERT_TRUE(back);
        EXPECT_EQ(*back, t);
    }
    EXPECT_FALSE(legacy::parse_legacy_date("2015-9-30 10:30", legacy::date_format::iso_minutes, 480));
    EXPECT_FALSE(legacy::parse_legacy_date("12a", legacy::date_format::epoch_seconds, 480));
}

TEST(ConversionCount, ThreeMacauHospitals) {
    EXPECT_EQ(legacy::conversion_count(3, legacy::conversion_mode::pairwise), 6u);
    EXPECT_EQ(legacy::conversion_count(3, legacy::conversion_mode::unified), 3u);
    EXPECT_EQ(legacy::conversion_count(1, legacy::conversion_mode::pairwise), 0u);
    EXPECT_EQ(legacy::conversion_count(0, legacy::conversion_mode::pairwise), 0u);
}

TEST(ConversionCount, DifferenceIsNTimesNMinusTwo) {
    for (std::int64_t n = 0; n <= 1000; ++n) {
        auto pairwise = static_cast<std::int64_t>(legacy::conversion_count(n, legacy::conversion_mode::pairwise));
        auto unified = static_cast<std::int64_t>(legacy::conversion_count(n, legacy::conversion_mode::unified));
        ASSERT_EQ(pairwise - unified, n * (n - 2)) << n;
    }
}

TEST(ConversionCount, PairwisePlanMatchesCount) {
    std::vector<std::string> hospitals;
    for (int n = 0; n <= 30; ++n) {
        auto plan = legacy::pairwise_plan(hospitals);
        EXPECT_EQ(plan.size(), legacy::conversion_count(n, legacy::conversion_mode::pairwise));
        std::set<std::pair<std::string, std::string>> unique(plan.begin(), plan.end());
        EXPECT_EQ(unique.size(), plan.size());
        hospitals.push_back("H" + std::to_string(n));
    }
}

}  // namespace
