#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "checks.hpp"
#include "oracles.hpp"
#include "redformer/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

using namespace redformer;
using namespace redformer::metrics;

namespace {

Box3D make_box(double x, double y, double yaw = 0.0) {
  Box3D b;
  b.center = {x, y, 0.8};
  b.size = {4.0, 2.0, 1.5};
  b.yaw = yaw;
  b.velocity = {2.0, 0.0};
  return b;
}

Annotation gt_at(double x, double y, ObjectClass c = ObjectClass::vehicle) {
  Annotation a;
  a.box = make_box(x, y);
  a.class_id = c;
  a.attribute = attribute_from_velocity(a.box.velocity);
  return a;
}

Detection pred_from(const Annotation& a, double confidence) {
  Detection d;
  d.box = a.box;
  d.class_id = a.class_id;
  d.attribute = a.attribute;
  d.confidence = confidence;
  return d;
}

Detection pred_at(double x, double y, double confidence, ObjectClass c = ObjectClass::vehicle) {
  return pred_from(gt_at(x, y, c), confidence);
}

// Greedy matching written from the definition: sort by confidence (stable),
// each prediction takes the closest unmatched ground truth under threshold.
std::vector<bool> greedy_oracle(const std::vector<Detection>& preds, const std::vector<Annotation>& gts,
                                double threshold) {
  std::vector<std::size_t> order(preds.size());
  for (std::size_t k = 0; k < order.size(); ++k) order[k] = k;
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return preds[a].confidence > preds[b].confidence; });
  std::vector<bool> used(gts.size(), false), tp(preds.size(), false);
  for (std::size_t k : order) {
    double best = threshold;
    int pick = -1;
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (used[g]) continue;
      const double d = std::hypot(preds[k].box.center.x() - gts[g].box.center.x(),
                                  preds[k].box.center.y() - gts[g].box.center.y());
      if (d < best) {
        best = d;
        pick = static_cast<int>(g);
      }
    }
    if (pick >= 0) {
      used[static_cast<std::size_t>(pick)] = true;
      tp[k] = true;
    }
  }
  return tp;
}

FrameGroundTruth labeled_frame(const std::string& id, int rain, int night, std::vector<Annotation> anns = {}) {
  return {id, rain, night, std::move(anns)};
}

struct Fixture {
  std::vector<FramePredictions> preds;
  std::vector<FrameGroundTruth> gts;
};

Fixture random_fixture(int frames, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> pos(-20.0, 20.0), jitter(-1.5, 1.5), conf(0.05, 1.0), coin(0.0, 1.0);
  std::uniform_int_distribution<int> count(0, 5), cls(0, kNumClasses - 1);
  Fixture fx;
  for (int f = 0; f < frames; ++f) {
    const std::string id = "f" + std::to_string(f);
    auto gt = labeled_frame(id, coin(rng) < 0.4, coin(rng) < 0.3);
    FramePredictions pr{id, {}};
    const int n = count(rng);
    for (int k = 0; k < n; ++k) {
      auto a = gt_at(pos(rng), pos(rng), static_cast<ObjectClass>(cls(rng)));
      gt.annotations.push_back(a);
      if (coin(rng) < 0.7) {
        auto d = pred_from(a, conf(rng));
        d.box.center.x() += jitter(rng);
        d.box.center.y() += jitter(rng);
        d.box.yaw = geometry::wrap_angle(d.box.yaw + jitter(rng));
        pr.detections.push_back(d);
      }
    }
    if (coin(rng) < 0.5) pr.detections.push_back(pred_at(pos(rng), pos(rng), conf(rng), static_cast<ObjectClass>(cls(rng))));
    fx.gts.push_back(std::move(gt));
    fx.preds.push_back(std::move(pr));
  }
  return fx;
}

}  // namespace

TEST_CASE("prediction on a ground-truth centre is a TP at every threshold") {
  const std::vector<Annotation> gts{gt_at(3.0, 4.0)};
  const std::vector<Detection> preds{pred_at(3.0, 4.0, 0.9)};
  for (double t : {0.5, 1.0, 2.0, 4.0}) {
    const auto m = match_detections(preds, gts, t);
    CHECK(m.is_tp == std::vector<bool>{true});
    CHECK(m.pairs == std::vector<std::pair<int, int>>{{0, 0}});
  }
}

TEST_CASE("prediction 3 m away is a FP at 2 m") {
  const std::vector<Annotation> gts{gt_at(0.0, 0.0)};
  const std::vector<Detection> preds{pred_at(3.0, 0.0, 0.9)};
  CHECK(match_detections(preds, gts, 2.0).is_tp == std::vector<bool>{false});
  CHECK(match_detections(preds, gts, 4.0).is_tp == std::vector<bool>{true});
}

TEST_CASE("distance equal to the threshold does not match") {
  const std::vector<Annotation> gts{gt_at(0.0, 0.0)};
  const std::vector<Detection> preds{pred_at(2.0, 0.0, 0.9)};
  CHECK(match_detections(preds, gts, 2.0).is_tp == std::vector<bool>{false});
}

TEST_CASE("matching uses ground-plane distance only") {
  std::vector<Annotation> gts{gt_at(0.0, 0.0)};
  gts[0].box.center.z() = 50.0;
  CHECK(match_detections(std::vector<Detection>{pred_at(0.3, 0.0, 0.5)}, gts, 0.5).is_tp[0]);
}

TEST_CASE("greedy matching equals the sorted-confidence oracle") {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> pos(-4.0, 4.0), conf(0.0, 1.0);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<Annotation> gts;
    std::vector<Detection> preds;
    for (int k = 0; k < 6; ++k) gts.push_back(gt_at(pos(rng), pos(rng)));
    for (int k = 0; k < 10; ++k) preds.push_back(pred_at(pos(rng), pos(rng), trial % 3 == 0 ? 0.5 : conf(rng)));
    for (double t : {0.5, 1.0, 2.0, 4.0}) CHECK(match_detections(preds, gts, t).is_tp == greedy_oracle(preds, gts, t));
  }
}

TEST_CASE("AP of a perfect detector is one") {
  CHECK(average_precision({true, true, true}, 3) == doctest::Approx(1.0));
}

TEST_CASE("AP with ground truth but no TP is zero") {
  CHECK(average_precision({false, false}, 4) == 0.0);
  CHECK(average_precision({}, 4) == 0.0);
}

TEST_CASE("AP without ground truth is zero") {
  CHECK(average_precision({false, false}, 0) == 0.0);
  CHECK(average_precision({}, 0) == 0.0);
}

TEST_CASE("AP matches hand-integrated PR curves") {
  const auto r = checks::ap_vs_hand_integration();
  CHECK_MESSAGE(r.ok, r.detail);
}

TEST_CASE("identical pairs have zero TP errors") {
  const auto a = gt_at(1.0, 2.0);
  const std::vector<std::pair<Detection, Annotation>> pairs{{pred_from(a, 0.9), a}};
  for (double e : tp_metrics(pairs)) CHECK(e == 0.0);
}

TEST_CASE("a 0.5 m centre offset shows only in ATE") {
  const auto a = gt_at(1.0, 2.0);
  auto d = pred_from(a, 0.9);
  d.box.center.x() += 0.3;
  d.box.center.y() -= 0.4;
  const std::vector<std::pair<Detection, Annotation>> pairs{{d, a}};
  const auto e = tp_metrics(pairs);
  CHECK(e[kTranslation] == doctest::Approx(0.5));
  for (int k = 1; k < 5; ++k) CHECK(e[k] == 0.0);
}

TEST_CASE("no pairs give the worst TP errors") {
  for (double e : tp_metrics({})) CHECK(e == 1.0);
}

TEST_CASE("TP errors match per-pair formulas") {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(-3.0, 3.0), s(0.5, 5.0), yaw(-std::numbers::pi, std::numbers::pi);
  std::vector<std::pair<Detection, Annotation>> pairs;
  std::array<double, 5> want{};
  for (int k = 0; k < 20; ++k) {
    Annotation a = gt_at(u(rng), u(rng));
    a.box.size = {s(rng), s(rng), s(rng)};
    a.box.yaw = yaw(rng);
    a.box.velocity = {u(rng), u(rng)};
    a.attribute = attribute_from_velocity(a.box.velocity);
    Detection d = pred_from(a, 0.5);
    d.box.center += Eigen::Vector3d(u(rng), u(rng), u(rng));
    d.box.size = {s(rng), s(rng), s(rng)};
    d.box.yaw = yaw(rng);
    d.box.velocity = {u(rng), u(rng)};
    d.attribute = k % 3 == 0 ? Attribute::moving : Attribute::stopped;
    pairs.emplace_back(d, a);

    want[0] += std::hypot(d.box.center.x() - a.box.center.x(), d.box.center.y() - a.box.center.y());
    double inter = 1.0, vd = 1.0, va = 1.0;
    for (int i = 0; i < 3; ++i) {
      inter *= std::min(d.box.size[i], a.box.size[i]);
      vd *= d.box.size[i];
      va *= a.box.size[i];
    }
    want[1] += 1.0 - inter / (vd + va - inter);
    double dy = std::fmod(std::abs(d.box.yaw - a.box.yaw), 2.0 * std::numbers::pi);
    want[2] += std::min(dy, 2.0 * std::numbers::pi - dy);
    want[3] += std::hypot(d.box.velocity.x() - a.box.velocity.x(), d.box.velocity.y() - a.box.velocity.y());
    want[4] += d.attribute == a.attribute ? 0.0 : 1.0;
  }
  const auto got = tp_metrics(pairs);
  for (int k = 0; k < 5; ++k) CHECK(std::abs(got[k] - want[k] / 20.0) < 1e-6);
}

TEST_CASE("orientation error wraps around pi") {
  auto a = make_box(0, 0, 3.0), b = make_box(0, 0, -3.0);
  CHECK(orientation_error(a, b) == doctest::Approx(2.0 * std::numbers::pi - 6.0));
  CHECK(orientation_error(a, b) <= std::numbers::pi);
}

TEST_CASE("NDS reproduces the published rows") {
  CHECK(nds(0.343, {0.725, 0.263, 0.422, 1.292, 0.153}) == doctest::Approx(0.4152).epsilon(1e-9));
  CHECK(nds(0.385, {0.726, 0.282, 0.407, 0.427, 0.218}) == doctest::Approx(0.4865).epsilon(1e-9));
  CHECK(nds(0.332, {0.649, 0.263, 0.535, 0.540, 0.142}) == doctest::Approx(0.4531).epsilon(1e-9));
  const auto r = checks::nds_rows();
  CHECK_MESSAGE(r.ok, r.detail);
}

TEST_CASE("NDS with every TP error at or above one is half the mAP") {
  CHECK(nds(0.6, {1.0, 1.5, 3.0, 1.0, 1.0}) == doctest::Approx(0.3));
  CHECK(nds(0.0, {1.0, 1.0, 1.0, 1.0, 1.0}) == 0.0);
}

TEST_CASE("NDS is monotone and bounded") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 1.0), e(0.0, 2.0);
  for (int k = 0; k < 500; ++k) {
    const double map = u(rng);
    TpErrors t{e(rng), u(rng), e(rng), e(rng), u(rng)};
    const double base = nds(map, t);
    CHECK(base >= 0.0);
    CHECK(base <= 1.0);
    CHECK(nds(std::min(1.0, map + 0.1), t) >= base);
    for (int i = 0; i < 5; ++i) {
      TpErrors worse = t;
      worse[i] += 0.2;
      CHECK(nds(map, worse) <= base);
    }
  }
}

TEST_CASE("subset filtering") {
  std::vector<FrameGroundTruth> rainy{labeled_frame("a", 1, 0), labeled_frame("b", 1, 1)};
  const auto same = filter_subset(rainy, Subset::rain);
  REQUIRE(same.size() == 2);
  CHECK(same[0].frame_id == "a");
  CHECK(same[1].frame_id == "b");
  std::vector<FrameGroundTruth> clear{labeled_frame("a", 0, 0), labeled_frame("b", 0, 1)};
  CHECK(filter_subset(clear, Subset::rain).empty());
  CHECK(filter_subset(clear, Subset::night).size() == 1);
  CHECK(filter_subset(clear, Subset::all).size() == 2);
}

TEST_CASE("subset size equals the label count") {
  std::mt19937_64 rng(4);
  std::bernoulli_distribution coin(0.35);
  std::vector<FrameGroundTruth> frames;
  int rain = 0, night = 0;
  for (int k = 0; k < 100; ++k) {
    const int r = coin(rng), n = coin(rng);
    rain += r;
    night += n;
    frames.push_back(labeled_frame("f" + std::to_string(k), r, n));
  }
  CHECK(filter_subset(frames, Subset::rain).size() == static_cast<std::size_t>(rain));
  CHECK(filter_subset(frames, Subset::night).size() == static_cast<std::size_t>(night));
}

TEST_CASE("unlabeled frames are a data error") {
  std::vector<FrameGroundTruth> frames{labeled_frame("a", 1, 0)};
  frames[0].night.reset();
  CHECK_THROWS_AS(filter_subset(frames, Subset::night), DataError);
}

TEST_CASE("subset names round trip") {
  for (auto s : {Subset::all, Subset::rain, Subset::night}) CHECK(parse_subset(subset_name(s)) == s);
  CHECK_FALSE(parse_subset("fog"));
}

TEST_CASE("predictions equal to ground truth score NDS one") {
  std::vector<FrameGroundTruth> gts;
  std::vector<FramePredictions> preds;
  for (int f = 0; f < 4; ++f) {
    auto gt = labeled_frame("f" + std::to_string(f), 0, 0,
                            {gt_at(f, 2.0, ObjectClass::vehicle), gt_at(-5.0, f, ObjectClass::pedestrian)});
    FramePredictions p{gt.frame_id, {}};
    for (const auto& a : gt.annotations) p.detections.push_back(pred_from(a, 1.0));
    gts.push_back(gt);
    preds.push_back(p);
  }
  const auto r = evaluate(preds, gts);
  CHECK(r.map == doctest::Approx(1.0));
  for (double e : r.mtp) CHECK(e == 0.0);
  CHECK(r.nds == doctest::Approx(1.0));
  // Classes without ground truth or predictions stay out of the means.
  CHECK(r.classes == std::vector<ObjectClass>{ObjectClass::vehicle, ObjectClass::pedestrian});
  CHECK_FALSE(r.empty);
}

TEST_CASE("empty predictions score zero") {
  std::vector<FrameGroundTruth> gts{labeled_frame("a", 0, 0, {gt_at(1.0, 1.0)})};
  std::vector<FramePredictions> preds;
  const auto r = evaluate(preds, gts);
  CHECK(r.map == 0.0);
  for (double e : r.mtp) CHECK(e == 1.0);
  CHECK(r.nds == 0.0);
}

TEST_CASE("evaluate equals the reference evaluator") {
  const auto r = checks::evaluate_vs_reference();
  CHECK_MESSAGE(r.ok, r.detail);
  const auto fx = random_fixture(50, 9);
  const auto got = evaluate(fx.preds, fx.gts);
  const auto want = oracle::evaluate(fx.preds, fx.gts);
  CHECK(std::abs(got.map - want.map) < 1e-6);
  CHECK(std::abs(got.nds - want.nds) < 1e-6);
  for (int k = 0; k < 5; ++k) CHECK(std::abs(got.mtp[k] - want.mtp[k]) < 1e-6);
  CHECK(got.classes == want.classes);
}

TEST_CASE("report invariants hold on random fixtures") {
  for (std::uint64_t seed = 10; seed < 20; ++seed) {
    const auto fx = random_fixture(30, seed);
    const auto r = evaluate(fx.preds, fx.gts);
    CHECK(r.map >= 0.0);
    CHECK(r.map <= 1.0);
    CHECK(r.nds >= 0.0);
    CHECK(r.nds <= 1.0);
    CHECK(r.mtp[kScale] >= 0.0);
    CHECK(r.mtp[kScale] <= 1.0);
    CHECK(r.mtp[kAttribute] >= 0.0);
    CHECK(r.mtp[kAttribute] <= 1.0);
    CHECK(r.mtp[kOrientation] <= std::numbers::pi);
    CHECK(r.mtp[kTranslation] >= 0.0);
    CHECK(r.mtp[kVelocity] >= 0.0);
  }
}

TEST_CASE("duplicating every prediction never raises AP") {
  for (std::uint64_t seed = 20; seed < 30; ++seed) {
    auto fx = random_fixture(20, seed);
    const auto base = evaluate(fx.preds, fx.gts);
    for (auto& f : fx.preds) {
      const auto copy = f.detections;
      f.detections.insert(f.detections.end(), copy.begin(), copy.end());
    }
    const auto dup = evaluate(fx.preds, fx.gts);
    for (const auto& [cls, aps] : base.ap)
      for (std::size_t t = 0; t < aps.size(); ++t) CHECK(dup.ap.at(cls)[t] <= aps[t] + 1e-12);
  }
}

TEST_CASE("AP depends only on confidence ranks") {
  auto fx = random_fixture(30, 31);
  const auto base = evaluate(fx.preds, fx.gts);
  for (auto& f : fx.preds)
    for (auto& d : f.detections) d.confidence *= 0.25;
  const auto scaled = evaluate(fx.preds, fx.gts);
  CHECK(scaled.map == base.map);
  CHECK(scaled.ap == base.ap);
}

TEST_CASE("per-frame TP labels agree between the union and its subsets") {
  const auto fx = random_fixture(40, 41);
  const auto whole = evaluate(fx.preds, fx.gts);
  std::vector<FrameGroundTruth> rain, dry;
  for (const auto& f : fx.gts) (*f.rain ? rain : dry).push_back(f);
  REQUIRE_FALSE(rain.empty());
  REQUIRE_FALSE(dry.empty());
  for (const auto* part : {&rain, &dry}) {
    const auto sub = evaluate(fx.preds, *part);
    CHECK(sub.frame_count == part->size());
    for (const auto& [frame, by_class] : sub.frame_tp) CHECK(whole.frame_tp.at(frame) == by_class);
  }
  CHECK(filter_subset(fx.gts, Subset::rain).size() == rain.size());
}

TEST_CASE("ground truth and predictions round trip through JSON") {
  const auto fx = random_fixture(10, 51);
  const auto gts = parse_ground_truth(ground_truth_to_json(fx.gts));
  REQUIRE(gts.size() == fx.gts.size());
  for (std::size_t k = 0; k < gts.size(); ++k) {
    CHECK(gts[k].frame_id == fx.gts[k].frame_id);
    CHECK(gts[k].rain == fx.gts[k].rain);
    CHECK(gts[k].night == fx.gts[k].night);
    CHECK(gts[k].annotations == fx.gts[k].annotations);
  }
  const auto preds = parse_predictions(predictions_to_json(fx.preds));
  REQUIRE(preds.size() == fx.preds.size());
  for (std::size_t k = 0; k < preds.size(); ++k) {
    REQUIRE(preds[k].detections.size() == fx.preds[k].detections.size());
    for (std::size_t d = 0; d < preds[k].detections.size(); ++d) {
      CHECK(preds[k].detections[d].box == fx.preds[k].detections[d].box);
      CHECK(preds[k].detections[d].confidence == fx.preds[k].detections[d].confidence);
    }
  }
}

TEST_CASE("both bare and versioned JSON layouts parse") {
  const std::string bare = R"([{"frame_id":"x","rain":1,"night":0,"annotations":[]}])";
  const std::string wrapped = R"({"schema_version":1,"frames":[{"frame_id":"x","rain":1,"night":0,"annotations":[]}]})";
  CHECK(parse_ground_truth(bare).size() == 1);
  CHECK(parse_ground_truth(wrapped).size() == 1);
  CHECK_THROWS_AS(parse_ground_truth(R"({"schema_version":7,"frames":[]})"), ParseError);
}

TEST_CASE("schema violations name the offending field") {
  auto message = [](const std::string& text) {
    try {
      parse_ground_truth(text, "gt.json");
    } catch (const ParseError& e) {
      return std::string(e.what());
    }
    return std::string();
  };
  CHECK(message("[{\"frame_id\": \"a\",\n \"annotations\": [}").find("line 2") != std::string::npos);
  const std::string ann = R"({"class":"vehicle","center":[0,0,0],"size":[1,1,1],"yaw":0,"velocity":[0,0],"attribute":"moving"})";
  CHECK(message("[{\"frame_id\":\"a\",\"annotations\":[" + ann + "]}]").empty());
  std::string bad_class = ann;
  bad_class.replace(bad_class.find("vehicle"), 7, "tractor");
  CHECK(message("[{\"frame_id\":\"a\",\"annotations\":[" + bad_class + "]}]").find("annotations[0].class") !=
        std::string::npos);
  std::string bad_size = ann;
  bad_size.replace(bad_size.find("[1,1,1]"), 7, "[1,1]");
  CHECK(message("[{\"frame_id\":\"a\",\"annotations\":[" + bad_size + "]}]").find(".size") != std::string::npos);
  CHECK(message(R"([{"frame_id":"a","rain":2,"annotations":[]}])").find(".rain") != std::string::npos);
  CHECK(message(R"([{"annotations":[]}])").find("frame_id") != std::string::npos);
  CHECK(message(R"([{"frame_id":"a","annotations":[]},{"frame_id":"a","annotations":[]}])").find("duplicate") !=
        std::string::npos);
  CHECK(message("42").find("gt.json") != std::string::npos);
}
