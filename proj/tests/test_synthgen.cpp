#include <set>

#include <gtest/gtest.h>

#include "tubelink/synthgen.hpp"

using namespace tubelink;

namespace {

void expect_tiled(const GeneratedVideo& v, const LabelSpace& labels) {
  for (const auto& f : v.annotations) {
    for (std::size_t i = 0; i < f.size(); ++i) {
      ASSERT_NE(f.class_ids[i], kVoidClass);
      EXPECT_EQ(f.instance_ids[i] != 0, labels.is_thing(f.class_ids[i]));
    }
  }
}

}  // namespace

TEST(Synthgen, NoThingsGivesPureStuff) {
  SceneConfig sc;
  sc.num_things = 0;
  const auto v = generate_video(sc);
  ASSERT_EQ(v.annotations.size(), 8u);
  for (const auto& f : v.annotations)
    for (std::size_t i = 0; i < f.size(); ++i) {
      EXPECT_TRUE(f.class_ids[i] == kSkyClass || f.class_ids[i] == kGroundClass);
      EXPECT_EQ(f.instance_ids[i], 0);
    }
}

TEST(Synthgen, StaticDiskKeepsItsMask) {
  SceneConfig sc;
  sc.num_things = 1;
  sc.shapes = {ThingShape::kDisk};
  sc.min_speed = sc.max_speed = 0.0;
  sc.seed = 4;
  const auto v = generate_video(sc);
  std::vector<std::uint8_t> first;
  for (const auto& f : v.annotations) {
    std::vector<std::uint8_t> m(f.size());
    for (std::size_t i = 0; i < f.size(); ++i) m[i] = f.instance_ids[i] != 0;
    if (first.empty()) first = m;
    EXPECT_EQ(m, first);
  }
  EXPECT_GT(std::count(first.begin(), first.end(), 1), 0);
}

TEST(Synthgen, AnnotationsTileEveryFrameAndIdsAreStable) {
  const LabelSpace labels = synthetic_label_space();
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    SceneConfig sc;
    sc.num_things = 4;
    sc.seed = seed;
    const auto v = generate_video(sc);
    expect_tiled(v, labels);
    std::map<int, int> cls;  // id -> class, fixed for the whole video
    for (const auto& f : v.annotations)
      for (std::size_t i = 0; i < f.size(); ++i) {
        if (f.instance_ids[i] == 0) continue;
        auto [it, fresh] = cls.emplace(f.instance_ids[i], f.class_ids[i]);
        EXPECT_EQ(it->second, f.class_ids[i]);
      }
  }
}

TEST(Synthgen, CrossingPathsProduceOcclusionFrames) {
  const LabelSpace labels = synthetic_label_space();
  int with_crossing = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    SceneConfig sc = benchmark_spec("occlusion").scene;
    sc.seed = seed;
    const auto v = generate_video(sc);
    expect_tiled(v, labels);
    with_crossing += v.crossing_frames > 0;
  }
  EXPECT_GT(with_crossing, 0);
}

TEST(Synthgen, SameSeedSameBits) {
  SceneConfig sc;
  sc.seed = 11;
  const auto a = generate_video(sc), b = generate_video(sc);
  EXPECT_EQ(a.clip.data(), b.clip.data());
  EXPECT_EQ(a.annotations, b.annotations);
  sc.seed = 12;
  EXPECT_NE(generate_video(sc).clip.data(), a.clip.data());
}

TEST(Synthgen, RejectsDegenerateConfigs) {
  SceneConfig sc;
  sc.height = 0;
  EXPECT_THROW(generate_video(sc), Error);
  sc = SceneConfig{};
  sc.max_size = 40;
  EXPECT_THROW(generate_video(sc), Error);
}

TEST(Benchmark, SplitSizesAndCrossingGuarantee) {
  const auto easy = generate_benchmark("easy", 1);
  ASSERT_EQ(easy.size(), 40u);
  EXPECT_EQ(std::count_if(easy.begin(), easy.end(), [](const auto& v) { return v.split == Split::kTrain; }), 32);
  EXPECT_EQ(easy.front().id, "train_000");
  EXPECT_EQ(easy.back().id, "val_007");
  EXPECT_EQ(easy.front().video.annotations.size(), 8u);
  for (const auto& v : generate_benchmark("occlusion", 2)) {
    EXPECT_GE(v.video.crossing_frames, 1) << v.id;
    EXPECT_EQ(v.video.annotations.size(), 12u);
  }
  EXPECT_EQ(benchmark_spec("long").scene.frames, 48);
  EXPECT_THROW(benchmark_spec("hard"), Error);
}
