#include "pulsestress/error.hpp"
#include "pulsestress/preprocess.hpp"

#include "synthetic.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>
#include <set>

using namespace pulsestress;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() /
               ("pulsestress_prep_" + std::to_string(::testing::UnitTest::GetInstance()->random_seed()) +
                "_" + ::testing::UnitTest::GetInstance()->current_test_info()->name());
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

}  // namespace

TEST(Prepare, SeventySecondSubjectGivesThreeSegments) {
    const auto rec = synth::synthetic_subject("S2", {{2, 70.0, 75.0}}, 1);
    ASSERT_EQ(rec.bvp.size(), 4480u);
    SubjectPrepStats st;
    const auto data = prepare_subject(rec, PreprocessConfig{}, &st);
    ASSERT_EQ(data.examples.size(), 3u);
    EXPECT_EQ(data.examples.start_indices, (std::vector<std::size_t>{0, 320, 640}));
    for (int label : data.examples.labels) EXPECT_EQ(label, 1);  // stress
    EXPECT_EQ(data.examples.segments.size(), 3u * 3840u);
    EXPECT_EQ(st.candidate_windows, 3u);
    EXPECT_EQ(st.labeled_windows, 3u);
    EXPECT_EQ(st.accepted, 3u);
    EXPECT_NEAR(data.examples.features[0][kMeanHr], 75.0, 3.0);
}

TEST(Prepare, FlatlineSubjectDropsEverySegment) {
    SubjectRecord rec;
    rec.subject_id = "S9";
    rec.bvp.assign(64 * 120, 0.0);
    rec.labels.assign(rec.bvp.size(), 1);
    SubjectPrepStats st;
    const auto data = prepare_subject(rec, PreprocessConfig{}, &st);
    EXPECT_EQ(data.examples.size(), 0u);
    EXPECT_EQ(st.labeled_windows, 13u);
    EXPECT_EQ(st.quality_drops, 13u);
    EXPECT_EQ(st.accepted, 0u);
}

TEST(Prepare, TwoClassMapsAmusementToNonStress) {
    const auto rec = synth::synthetic_subject("S3", {{3, 65.0, 70.0}, {4, 60.0, 70.0}}, 2);
    PreprocessConfig cfg;
    cfg.task = TaskKind::TwoClass;
    SubjectPrepStats st;
    const auto data = prepare_subject(rec, cfg, &st);
    ASSERT_EQ(data.examples.size(), 2u);
    for (int label : data.examples.labels) EXPECT_EQ(label, 0);
    cfg.task = TaskKind::ThreeClass;
    for (int label : prepare_subject(rec, cfg).examples.labels) EXPECT_EQ(label, 2);
}

TEST(Cache, KeyTracksConfigAndInputs) {
    TempDir dir;
    const auto a = dir.path / "S2.csv";
    const auto b = dir.path / "S3.csv";
    write_subject(a, synth::synthetic_subject("S2", {{1, 70.0, 70.0}}, 3));
    write_subject(b, synth::synthetic_subject("S3", {{1, 70.0, 70.0}}, 4));
    const PreprocessConfig base;
    const auto key = cache_key(base, {a, b});
    EXPECT_EQ(cache_key(base, {a, b}), key);

    auto perturbed = [&](auto mutate) {
        PreprocessConfig c = base;
        mutate(c);
        return cache_key(c, {a, b});
    };
    EXPECT_NE(perturbed([](PreprocessConfig& c) { c.f1 = 0.8; }), key);
    EXPECT_NE(perturbed([](PreprocessConfig& c) { c.f2 = 3.5; }), key);
    EXPECT_NE(perturbed([](PreprocessConfig& c) { c.order = 4; }), key);
    EXPECT_NE(perturbed([](PreprocessConfig& c) { c.stride = 640; }), key);
    EXPECT_NE(perturbed([](PreprocessConfig& c) { c.window = 1920; }), key);
    EXPECT_NE(perturbed([](PreprocessConfig& c) { c.task = TaskKind::TwoClass; }), key);
    EXPECT_NE(cache_key(base, {a}), key);

    write_subject(b, synth::synthetic_subject("S3", {{1, 70.0, 71.0}}, 4));
    EXPECT_NE(cache_key(base, {a, b}), key);
}

TEST(Cache, RoundTripAndMissingCache) {
    TempDir dir;
    const auto cache = cache_dir_for(dir.path, TaskKind::ThreeClass);
    EXPECT_EQ(cache, dir.path / "3class");
    EXPECT_FALSE(read_manifest(cache).has_value());
    try {
        read_cache(cache);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), Errc::MissingCache);
        EXPECT_NE(std::string(e.what()).find("pulsestress preprocess"), std::string::npos);
    }

    std::vector<SubjectData> subjects;
    CacheManifest manifest;
    manifest.key = "abc123";
    manifest.task = "3class";
    for (int i = 0; i < 2; ++i) {
        const auto rec = synth::synthetic_subject("S" + std::to_string(i + 2),
                                                  {{1, 70.0, 72.0}, {2, 70.0, 64.0}}, 10 + i);
        SubjectPrepStats st;
        subjects.push_back(prepare_subject(rec, PreprocessConfig{}, &st));
        manifest.subjects.push_back(st);
    }
    write_cache(cache, manifest, subjects);
    EXPECT_TRUE(fs::exists(cache / "segments.bin"));
    EXPECT_TRUE(fs::exists(cache / "features.csv"));

    const auto m = read_manifest(cache);
    ASSERT_TRUE(m.has_value());
    EXPECT_EQ(m->key, "abc123");
    ASSERT_EQ(m->subjects.size(), 2u);
    EXPECT_EQ(m->subjects[1].accepted, subjects[1].examples.size());

    const auto back = read_cache(cache);
    ASSERT_EQ(back.size(), 2u);
    for (std::size_t i = 0; i < 2; ++i) {
        EXPECT_EQ(back[i].subject_id, subjects[i].subject_id);
        EXPECT_EQ(back[i].examples.labels, subjects[i].examples.labels);
        EXPECT_EQ(back[i].examples.segments, subjects[i].examples.segments);
        EXPECT_EQ(back[i].examples.start_indices, subjects[i].examples.start_indices);
        ASSERT_EQ(back[i].examples.features.size(), subjects[i].examples.features.size());
        for (std::size_t k = 0; k < back[i].examples.features.size(); ++k) {
            for (std::size_t j = 0; j < kFeatureCount; ++j) {
                EXPECT_DOUBLE_EQ(back[i].examples.features[k][j], subjects[i].examples.features[k][j]);
            }
        }
    }

    std::ifstream csv(cache / "features.csv");
    std::string header;
    std::getline(csv, header);
    EXPECT_EQ(header.rfind("subject_id,start_index,label,mean_hr", 0), 0u);
}

TEST(Cache, AtomicWriteReplacesFile) {
    TempDir dir;
    const auto p = dir.path / "x.txt";
    write_file_atomic(p, "one");
    write_file_atomic(p, "two");
    std::ifstream in(p);
    std::string s;
    std::getline(in, s);
    EXPECT_EQ(s, "two");
    for (const auto& e : fs::directory_iterator(dir.path)) EXPECT_EQ(e.path().filename(), "x.txt");
}

TEST(Cache, KeyChangesUnderRandomPerturbations) {
    std::mt19937_64 rng(77);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const PreprocessConfig base;
    const auto key = cache_key(base, {});
    std::set<std::string> seen{key};
    for (int trial = 0; trial < 200; ++trial) {
        PreprocessConfig c = base;
        switch (rng() % 7) {
            case 0: c.f1 = 0.1 + unit(rng); break;
            case 1: c.f2 = 3.0 + unit(rng); break;
            case 2: c.order = 1 + static_cast<int>(rng() % 8); break;
            case 3: c.window = 64 * (10 + rng() % 100); break;
            case 4: c.stride = 1 + rng() % 2000; break;
            case 5: c.fs = 32.0 * static_cast<double>(1 + rng() % 8); break;
            default: c.task = TaskKind::TwoClass; break;
        }
        const auto k = cache_key(c, {});
        if (c.canonical() == base.canonical()) {
            EXPECT_EQ(k, key);
        } else {
            EXPECT_NE(k, key) << c.canonical();
        }
        seen.insert(k);
    }
    EXPECT_GT(seen.size(), 100u);
}
