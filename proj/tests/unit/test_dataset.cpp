#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "hbscreen/color.hpp"
#include "hbscreen/dataset.hpp"
#include "hbscreen/error.hpp"
#include "hbscreen/features.hpp"
#include "hbscreen/image_io.hpp"
#include "hbscreen/models.hpp"
#include "oracles.hpp"
#include "test_support.hpp"

using namespace hbscreen;

namespace {

std::multiset<std::uint8_t> pixel_multiset(const ImageRGB8& img) {
  return {img.data().begin(), img.data().end()};
}

double column_mean(const std::vector<Row>& rows, std::size_t c) {
  double s = 0;
  for (const auto& r : rows) s += r[c];
  return s / rows.size();
}

LabelledSample sample(const std::string& id, Severity cls, double hb) {
  LabelledSample s;
  s.patient_id = id;
  s.cls = cls;
  s.hb = hb;
  for (int r = 0; r < 3; ++r) {
    s.features[r].valid = true;
    s.features[r].region = kRegions[r];
    s.features[r].values.fill(hb + r);
  }
  return s;
}

}  // namespace

// ---- augmentation ---------------------------------------------------------------

TEST(Augment, FlipsAndRotationPreservePixelMultiset) {
  const ImageRGB8 img = fixtures::random_image(9, 6, 3);
  const auto out = augment_images(img, parse_augment_plan("flip_h,flip_v,rot90"));
  ASSERT_EQ(out.size(), 3u);
  for (const auto& o : out) EXPECT_EQ(pixel_multiset(o), pixel_multiset(img));
}

TEST(Augment, IdentityAffineIsExactCopy) {
  const ImageRGB8 img = fixtures::random_image(9, 6, 4);
  const auto out = augment_images(img, parse_augment_plan("affine:1:0:0:0:1:0"));
  ASSERT_EQ(out.size(), 1u);
  EXPECT_EQ(out[0], img);
  EXPECT_EQ(augment_images(img, parse_augment_plan("identity"))[0], img);
}

TEST(Augment, BlurDirectivesRejected) {
  for (const char* plan : {"blur", "flip_h,gaussian_blur", "median", "smooth", "diffuse", "box_blur"}) {
    EXPECT_THROW(parse_augment_plan(plan), InvalidArgument) << plan;
  }
  EXPECT_THROW(parse_augment_plan("sharpen"), InvalidArgument);
  EXPECT_THROW(parse_augment_plan("affine:1:0:0"), InvalidArgument);
  EXPECT_THROW(augment_images(fixtures::random_image(2, 2, 1), AugmentPlan{}), InvalidArgument);
}

// ---- SMOTE -----------------------------------------------------------------------

TEST(Smote, TwoPointsStayOnTheSegment) {
  const std::vector<Row> pts{{0.0, 0.0}, {4.0, 2.0}};
  for (const Row& r : smote(pts, 1, 200, 9)) {
    ASSERT_EQ(r.size(), 2u);
    EXPECT_NEAR(r[1], r[0] / 2.0, 1e-12);
    EXPECT_GE(r[0], 0.0);
    EXPECT_LE(r[0], 4.0);
  }
}

TEST(Smote, ZeroRequestedGivesEmpty) {
  const std::vector<Row> pts{{0.0}, {1.0}, {2.0}};
  EXPECT_TRUE(smote(pts, 2, 0, 1).empty());
}

TEST(Smote, OutputsInsidePlantedHull) {
  const std::vector<Row> pts{{0, 0}, {10, 1}, {4, 8}, {3, 3}, {7, 4}};
  std::vector<std::array<double, 2>> hull_pts;
  for (const auto& p : pts) hull_pts.push_back({p[0], p[1]});
  const auto out = smote(pts, 3, 1000, 42);
  ASSERT_EQ(out.size(), 1000u);
  for (const Row& r : out) EXPECT_TRUE(oracle::in_convex_hull_2d(hull_pts, {r[0], r[1]}));
}

TEST(Smote, SeededAndValidated) {
  const std::vector<Row> pts{{0, 0}, {1, 1}, {2, 0}};
  EXPECT_EQ(smote(pts, 2, 30, 5), smote(pts, 2, 30, 5));
  EXPECT_NE(smote(pts, 2, 30, 5), smote(pts, 2, 30, 6));
  EXPECT_THROW(smote(pts, 3, 1, 1), InvalidArgument);
  EXPECT_THROW(smote(std::vector<Row>{{1.0}}, 1, 1, 1), InvalidArgument);
  EXPECT_THROW(smote(std::vector<Row>{{1.0}, {1.0, 2.0}}, 1, 1, 1), InvalidArgument);
}

// ---- ROSE ------------------------------------------------------------------------

TEST(Rose, ZeroBandwidthResamplesInputs) {
  const std::vector<Row> rows{{1, 2}, {3, 4}, {5, 6}};
  for (const Row& r : rose(rows, 0.0, 100, 3)) EXPECT_NE(std::find(rows.begin(), rows.end(), r), rows.end());
}

TEST(Rose, ConstantColumnStaysConstant) {
  const std::vector<Row> rows{{1, 7}, {3, 7}, {5, 7}};
  for (const Row& r : rose(rows, 2.0, 100, 3)) EXPECT_EQ(r[1], 7.0);
}

TEST(Rose, MeanWithinThreeStandardErrors) {
  const std::vector<Row> rows{{0.0}, {1.0}, {5.0}, {6.0}};
  const double h = 0.8;
  const auto out = rose(rows, h, 10000, 11);
  // per-draw variance: population variance of the rows + (h * sample std)^2
  const double mean = 3.0;
  const double pop_var = (9 + 4 + 4 + 9) / 4.0;
  const double sample_var = (9 + 4 + 4 + 9) / 3.0;
  const double se = std::sqrt((pop_var + h * h * sample_var) / 10000.0);
  EXPECT_LE(std::abs(column_mean(out, 0) - mean), 3 * se);
  EXPECT_THROW(rose(rows, -1.0, 1, 1), InvalidArgument);
}

// ---- parity ----------------------------------------------------------------------

TEST(Parity, ClassesToppedUpToCommonCount) {
  const std::vector<std::vector<Row>> per_class{
      {{0, 0}, {1, 0}, {0, 1}}, {{5, 5}, {6, 5}, {5, 6}, {6, 6}, {5.5, 5.5}, {6, 5.5}, {5.2, 5.8}}, {{9, 9}}};
  for (auto method : {Oversampler::Smote, Oversampler::Rose}) {
    const auto out = oversample_to_parity(per_class, {method, 2, 0.5, 0, 1});
    for (const auto& c : out) EXPECT_EQ(c.size(), 7u);
    for (std::size_t c = 0; c < 3; ++c) {
      for (std::size_t i = 0; i < per_class[c].size(); ++i) EXPECT_EQ(out[c][i], per_class[c][i]);
    }
  }
  const auto bigger = oversample_to_parity(per_class, {Oversampler::Smote, 2, 0.5, 20, 1});
  for (const auto& c : bigger) EXPECT_EQ(c.size(), 20u);
  EXPECT_THROW(oversample_to_parity({{{1.0}}, {}}, {}), InvalidArgument);
}

// ---- splits ----------------------------------------------------------------------

TEST(Split, NoPatientInBothFolds) {
  std::vector<LabelledSample> s;
  for (int i = 0; i < 60; ++i) {
    const Severity cls = kSeverities[i % 3];
    s.push_back(sample("p" + std::to_string(i % 40), cls, 6.0 + i % 3 * 3));
  }
  // repeated patients keep one class each
  for (auto& x : s) x.cls = kSeverities[std::stoi(x.patient_id.substr(1)) % 3];
  const Split sp = split_by_patient(s, 0.25, 3);
  std::set<std::string> train_ids, test_ids;
  for (const auto& x : sp.train.samples()) train_ids.insert(x.patient_id);
  for (const auto& x : sp.test) test_ids.insert(x.patient_id);
  for (const auto& id : test_ids) EXPECT_FALSE(train_ids.contains(id)) << id;
  EXPECT_EQ(sp.train.samples().size() + sp.test.size(), s.size());
  EXPECT_EQ(train_ids.size() + test_ids.size(), 40u);
  EXPECT_EQ(test_ids.size(), 10u);
  std::map<Severity, int> per_class;
  for (const auto& x : sp.test) per_class[x.cls]++;
  EXPECT_EQ(per_class.size(), 3u);  // stratified
}

TEST(Split, BalanceOnlySeesTrainingRows) {
  std::vector<LabelledSample> s;
  for (int i = 0; i < 30; ++i) s.push_back(sample("p" + std::to_string(i), kSeverities[i % 3], 100.0 + i));
  const Split sp = split_by_patient(s, 0.2, 1);
  std::set<double> test_hb;
  for (const auto& x : sp.test) test_hb.insert(x.hb);
  const auto balanced = balance(sp.train, {Oversampler::Smote, 1, 0.5, 0, 2});
  for (const auto& cls : balanced) {
    for (const Row& r : cls) {
      ASSERT_EQ(r.size(), static_cast<std::size_t>(3 * kFeatureLength + 1));
      EXPECT_FALSE(test_hb.contains(r.back())) << r.back();
    }
  }
}

// ---- synthetic corpus ------------------------------------------------------------

TEST(Synth, SameSeedBitIdentical) {
  const auto a = synth_corpus(5, 7);
  const auto b = synth_corpus(5, 7);
  for (int i = 0; i < 5; ++i) {
    EXPECT_EQ(a[i].id, b[i].id);
    EXPECT_EQ(a[i].hb, b[i].hb);
    for (int r = 0; r < 3; ++r) EXPECT_EQ(a[i].images[r], b[i].images[r]);
  }
  EXPECT_NE(synth_corpus(1, 8)[0].images[0], a[0].images[0]);
}

TEST(Synth, PlantedHbInRangeAndPallorOrdered) {
  for (Region r : kRegions) EXPECT_GT(synth_roi_lab(r, 17.0)[1], synth_roi_lab(r, 5.0)[1]);
  const auto corpus = synth_corpus(40, 3);
  for (const auto& p : corpus) {
    EXPECT_GE(p.hb, kSynthHbMin);
    EXPECT_LE(p.hb, kSynthHbMax);
    EXPECT_NO_THROW(p.demographics.validate());
  }
  const auto [lo, hi] = std::minmax_element(corpus.begin(), corpus.end(),
                                            [](const auto& a, const auto& b) { return a.hb < b.hb; });
  for (int r = 0; r < 3; ++r) {
    auto a_mean = [&](const SynthPatient& p, int idx) {
      const RegionMask m = synth_roi_mask(3, idx, kRegions[r]);
      return extract(p.images[r], m, kRegions[r], {}).values[slot::mean(channel::A)];
    };
    EXPECT_GT(a_mean(*hi, static_cast<int>(hi - corpus.begin())), a_mean(*lo, static_cast<int>(lo - corpus.begin())));
  }
}

TEST(Synth, RoiRednessTracksPlantedHb) {
  const auto corpus = synth_corpus(100, 21);
  for (int r = 0; r < 3; ++r) {
    std::vector<double> a, hb;
    for (int i = 0; i < 100; ++i) {
      const RegionMask m = synth_roi_mask(21, i, kRegions[r]);
      a.push_back(extract(corpus[i].images[r], m, kRegions[r], {}).values[slot::mean(channel::A)]);
      hb.push_back(corpus[i].hb);
    }
    EXPECT_GE(pearson(a, hb), 0.95) << to_string(kRegions[r]);
  }
}

TEST(Corpus, WriteReadRoundTrip) {
  fixtures::TempDir dir("corpus");
  const auto corpus = synth_corpus(3, 4);
  write_corpus(corpus, dir.path());
  const auto entries = read_corpus(dir.path());
  ASSERT_EQ(entries.size(), 3u);
  for (int i = 0; i < 3; ++i) {
    EXPECT_EQ(entries[i].id, corpus[i].id);
    ASSERT_TRUE(entries[i].hb.has_value());
    EXPECT_NEAR(*entries[i].hb, corpus[i].hb, 1e-9);
    EXPECT_EQ(entries[i].demographics.sex, corpus[i].demographics.sex);
    const PatientImages imgs = load_patient_images(entries[i].dir);
    EXPECT_TRUE(imgs.missing.empty());
    for (int r = 0; r < 3; ++r) EXPECT_EQ(*imgs.images[r], corpus[i].images[r]);
  }
  std::filesystem::remove(entries[0].dir / image_filename(Region::Tongue));
  EXPECT_EQ(load_patient_images(entries[0].dir).missing, std::vector<Region>{Region::Tongue});
  EXPECT_THROW(read_corpus(dir.path() / "nope"), DataError);
}
