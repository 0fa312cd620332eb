#include <gtest/gtest.h>

#include <algorithm>
#include <fstream>
#include <set>

#include "test_support.hpp"
#include "uadlab/dataset_io.hpp"
#include "uadlab/phantom.hpp"

using namespace uadlab;
using namespace uadlab::phantom;

TEST(Phantom, ImagesAreDeterministicAndInRange) {
  PhantomSpec ps;
  ps.n_subjects = 5;
  ps.seed = 9;
  const auto a = generate_subjects(ps);
  const auto b = generate_subjects(ps);
  EXPECT_EQ(a, b);
  for (const auto& s : a) {
    const Tensor img = render_image(s, 3, ps);
    EXPECT_EQ(img.storage(), render_image(s, 3, ps).storage());
    EXPECT_NE(img.storage(), render_image(s, 4, ps).storage());
    for (double v : img.data()) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
    }
    // Two-pixel border stays empty.
    for (std::size_t c = 0; c < ps.image_size; ++c) {
      EXPECT_EQ(img.at(0, c), 0.0);
      EXPECT_EQ(img.at(1, c), 0.0);
    }
  }
  ps.seed = 10;
  EXPECT_NE(generate_subjects(ps), a);
}

TEST(Phantom, GeometryAndRangeValidation) {
  PhantomSpec ps;
  ps.shape_jitter = 0.09;
  EXPECT_THROW(ps.validate(), ConfigError);
  ps = PhantomSpec{};
  ps.base_intensity_min = 0.9;
  ps.base_intensity_max = 0.5;
  EXPECT_THROW(ps.validate(), ConfigError);
}

TEST(Simulation, DimsOnlyTheRegion) {
  PhantomSpec ps;
  ps.n_subjects = 1;
  const auto subj = generate_subjects(ps).front();
  const Tensor x = render_image(subj, 0, ps);
  const Tensor region = default_region(ps);
  const auto pair = simulate_hypometabolism(x, region, 0.3);
  std::size_t mask_pixels = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    EXPECT_LE(pair.x_prime[i], x[i]);
    if (pair.mask[i] > 0.5) {
      ++mask_pixels;
      EXPECT_NEAR(pair.x_prime[i], 0.7 * x[i], 1e-15);
    }
    if (region[i] < 0.5) EXPECT_EQ(pair.x_prime[i], x[i]);
  }
  EXPECT_GT(mask_pixels, 10u);
  EXPECT_FALSE(pair.degenerate);
  EXPECT_TRUE(simulate_hypometabolism(x, region, 0.0).degenerate);
  EXPECT_THROW(simulate_hypometabolism(x, region, 1.5), DomainError);
  EXPECT_THROW(simulate_hypometabolism(x, Tensor(Shape{4, 4}), 0.3), ShapeError);
  EXPECT_THROW(simulate_hypometabolism(Tensor(x.shape()), region, 0.3), DataError);
}

TEST(Datasets, SplitsAreDisjointAndSubjectsSeparated) {
  const auto ds = build_standard_datasets(testkit::tiny_dataset_spec(), 4);
  std::set<std::uint64_t> seen;
  for (const auto& fold : ds.splits.folds) {
    for (auto s : fold) EXPECT_TRUE(seen.insert(s).second);
  }
  EXPECT_EQ(seen.size(), 10u);
  for (std::size_t f = 0; f < ds.splits.k(); ++f) {
    const auto [tr, va] = ds.fold_split(f);
    EXPECT_EQ(tr.size() + va.size(), ds.train.size());
    for (const auto* v : va) {
      for (const auto* t : tr) EXPECT_NE(v->subject, t->subject);
    }
  }
  std::set<std::uint64_t> test_subjects;
  for (const auto& r : ds.test_cn) test_subjects.insert(r.subject);
  for (const auto& set : ds.simulated) {
    for (const auto& p : set.pairs) EXPECT_EQ(test_subjects.count(p.subject_id), 0u);
  }
  for (const auto& r : ds.train) EXPECT_EQ(test_subjects.count(r.subject), 0u);
  EXPECT_EQ(ds.simulated.size(), 2u);
  EXPECT_EQ(ds.simulated[0].name, "test-AD-30");
  EXPECT_EQ(ds.simulated[1].name, "test-AD-50");
  EXPECT_THROW(ds.fold_split(2), ConfigError);
  EXPECT_THROW(ds.simulated_set("test-AD-70"), DataError);
}

TEST(Datasets, WriteReadRoundTripIsExact) {
  const auto ds = build_standard_datasets(testkit::tiny_dataset_spec(), 5);
  const auto dir = testkit::scratch_dir("dataset_io");
  write_dataset(ds, dir);
  const auto back = read_dataset(dir);
  EXPECT_EQ(back.spec, ds.spec);
  EXPECT_EQ(back.seed, ds.seed);
  EXPECT_EQ(back.splits, ds.splits);
  ASSERT_EQ(back.train.size(), ds.train.size());
  for (std::size_t i = 0; i < ds.train.size(); ++i) EXPECT_EQ(back.train[i].image.storage(), ds.train[i].image.storage());
  for (std::size_t s = 0; s < ds.simulated.size(); ++s) {
    for (std::size_t i = 0; i < ds.simulated[s].pairs.size(); ++i) {
      EXPECT_EQ(back.simulated[s].pairs[i].x_prime.storage(), ds.simulated[s].pairs[i].x_prime.storage());
      EXPECT_EQ(back.simulated[s].pairs[i].mask.storage(), ds.simulated[s].pairs[i].mask.storage());
    }
  }
  const json m = read_manifest(dir);
  EXPECT_EQ(m.at("simulated").size(), 2u);
  std::ofstream(dir / "manifest.json") << "{not json";
  EXPECT_THROW(read_manifest(dir), DataError);
}

TEST(Datasets, SameSeedSameBytes) {
  const auto a = build_standard_datasets(testkit::tiny_dataset_spec(), 6);
  const auto b = build_standard_datasets(testkit::tiny_dataset_spec(), 6);
  ASSERT_EQ(a.test_cn.size(), b.test_cn.size());
  for (std::size_t i = 0; i < a.test_cn.size(); ++i) EXPECT_EQ(a.test_cn[i].image.storage(), b.test_cn[i].image.storage());
  EXPECT_EQ(a.splits, b.splits);
}
