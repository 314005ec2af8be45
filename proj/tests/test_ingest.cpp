#include "pulsestress/error.hpp"
#include "pulsestress/ingest.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>

using namespace pulsestress;

namespace {

Errc error_code_of(const std::function<void()>& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.code();
    }
    ADD_FAILURE() << "expected an Error";
    return Errc::Io;
}

std::vector<std::uint8_t> filled(int raw, std::size_t n = 3840) {
    return std::vector<std::uint8_t>(n, static_cast<std::uint8_t>(raw));
}

}  // namespace

TEST(Ingest, ParsesThreeRows) {
    const auto rec = parse_subject("# fs=64\n0.5,1\n0.6,1\n0.4,2\n", "S2");
    EXPECT_EQ(rec.subject_id, "S2");
    ASSERT_EQ(rec.bvp.size(), 3u);
    EXPECT_EQ(rec.labels, (std::vector<std::uint8_t>{1, 1, 2}));
    EXPECT_DOUBLE_EQ(rec.bvp[1], 0.6);
}

TEST(Ingest, RejectsOtherSampleRates) {
    EXPECT_EQ(error_code_of([] { parse_subject("# fs=32\n0.5,1\n", "S2"); }),
              Errc::UnsupportedRate);
}

TEST(Ingest, RejectsGarbledHeader) {
    EXPECT_EQ(error_code_of([] { parse_subject("bvp,label\n0.5,1\n", "S2"); }), Errc::Format);
    EXPECT_EQ(error_code_of([] { parse_subject("", "S2"); }), Errc::Format);
}

TEST(Ingest, LabelOutOfRangeNamesTheRow) {
    try {
        parse_subject("# fs=64\n0.5,1\n0.6,9\n", "S3");
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), Errc::Validation);
        EXPECT_NE(std::string(e.what()).find("row 2"), std::string::npos) << e.what();
    }
}

TEST(Ingest, EmptyAndNonNumericInputs) {
    EXPECT_EQ(error_code_of([] { parse_subject("# fs=64\n", "S2"); }), Errc::EmptyData);
    EXPECT_EQ(error_code_of([] { parse_subject("# fs=64\nabc,1\n", "S2"); }), Errc::Parse);
    EXPECT_EQ(error_code_of([] { parse_subject("# fs=64\n1.0\n", "S2"); }), Errc::Parse);
}

TEST(Ingest, RoundTripPreservesValues) {
    std::mt19937_64 rng(7);
    std::normal_distribution<double> normal(0.0, 50.0);
    std::uniform_int_distribution<int> label(0, 7);
    for (int trial = 0; trial < 5; ++trial) {
        SubjectRecord rec;
        rec.subject_id = "S9";
        for (int i = 0; i < 500; ++i) {
            rec.bvp.push_back(normal(rng));
            rec.labels.push_back(static_cast<std::uint8_t>(label(rng)));
        }
        EXPECT_EQ(parse_subject(format_subject(rec), "S9"), rec);
    }
}

TEST(Ingest, LoadsFromDiskAndListsSubjectsInNumericOrder) {
    const auto dir = std::filesystem::temp_directory_path() / "pulsestress_ingest_test";
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    SubjectRecord rec{"S10", 64, {1.0, 2.0}, {1, 2}};
    write_subject(dir / "S10.csv", rec);
    rec.subject_id = "S2";
    write_subject(dir / "S2.csv", rec);
    std::ofstream(dir / "notes.txt") << "ignored";

    const auto files = list_subject_files(dir);
    ASSERT_EQ(files.size(), 2u);
    EXPECT_EQ(files[0].filename(), "S2.csv");
    EXPECT_EQ(files[1].filename(), "S10.csv");
    EXPECT_EQ(load_subject(files[1]).subject_id, "S10");
    std::filesystem::remove_all(dir);
}

TEST(SegmentLabel, UniformWindowsMapToTaskClasses) {
    EXPECT_EQ(map_segment_label(filled(2), TaskKind::ThreeClass), 1);  // stress
    EXPECT_EQ(map_segment_label(filled(1), TaskKind::ThreeClass), 0);  // baseline
    EXPECT_EQ(map_segment_label(filled(3), TaskKind::ThreeClass), 2);  // amusement
    EXPECT_EQ(map_segment_label(filled(3), TaskKind::TwoClass), 0);    // non-stress
    EXPECT_EQ(map_segment_label(filled(1), TaskKind::TwoClass), 0);
    EXPECT_EQ(map_segment_label(filled(2), TaskKind::TwoClass), 1);
}

TEST(SegmentLabel, MixedAndNonTaskWindowsAreDiscarded) {
    auto mixed = filled(1);
    mixed.back() = 2;
    EXPECT_FALSE(map_segment_label(mixed, TaskKind::ThreeClass));
    for (int raw : {0, 4, 5, 6, 7}) {
        EXPECT_FALSE(map_segment_label(filled(raw), TaskKind::ThreeClass)) << raw;
        EXPECT_FALSE(map_segment_label(filled(raw), TaskKind::TwoClass)) << raw;
    }
}

TEST(SegmentLabel, TwoClassIsInvariantUnderSwappingBaselineAndAmusement) {
    std::mt19937_64 rng(3);
    std::uniform_int_distribution<int> raw(0, 7);
    for (int trial = 0; trial < 200; ++trial) {
        const bool uniform = trial % 2 == 0;
        std::vector<std::uint8_t> w(64);
        const int base = raw(rng);
        for (auto& v : w) v = static_cast<std::uint8_t>(uniform ? base : raw(rng));
        auto swapped = w;
        for (auto& v : swapped) v = v == 1 ? 3 : v == 3 ? 1 : v;
        EXPECT_EQ(map_segment_label(w, TaskKind::TwoClass),
                  map_segment_label(swapped, TaskKind::TwoClass));
    }
}
