#include <doctest.h>

#include <random>

#include "pmr/bench/metrics.hpp"
#include "pmr/synth/synth.hpp"

using namespace pmr;
using namespace pmr::synth;

namespace {

bool same_frame(const motion::MotionFrame& a, const motion::MotionFrame& b) {
  return a.translation == b.translation && a.rotations == b.rotations;
}

}  // namespace

TEST_CASE("clean clips rest on the ground") {
  const auto& skel = motion::desk_humanoid();
  const std::vector<std::pair<const char*, motion::MotionSequence>> clips{
      {"walk", walk({})}, {"squat", squat({})}, {"kick", kick({})}};
  for (const auto& [name, seq] : clips) {
    CAPTURE(name);
    const auto r = bench::evaluate(skel, seq, {});
    CHECK(r.gp_mean == 0.0);
    CHECK(r.float_mean == 0.0);
    CHECK(r.fs_mean < 1.0);
  }
}

TEST_CASE("jump leaves the ground and lands") {
  const auto& skel = motion::desk_humanoid();
  const auto seq = jump({});
  const auto g = bench::sequence_geometry(skel, seq, 16);
  const auto flt = bench::float_trace(g, {});
  CHECK(*std::max_element(flt.begin(), flt.end()) > 50.0);
  CHECK(flt.front() == 0.0);
  CHECK(flt.back() == 0.0);
}

TEST_CASE("corpus is deterministic") {
  const auto a = corpus(6, 3, {ClipKind::Walk, ClipKind::Jump});
  const auto b = corpus(6, 3, {ClipKind::Walk, ClipKind::Jump});
  REQUIRE(a.size() == 6);
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].name == b[i].name);
    REQUIRE(a[i].seq.size() == b[i].seq.size());
    for (std::size_t t = 0; t < a[i].seq.size(); ++t) CHECK(same_frame(a[i].seq.frames[t], b[i].seq.frames[t]));
  }
  CHECK(clip_kind_from_name(clip_kind_name(ClipKind::Kick)) == ClipKind::Kick);
}

TEST_CASE("inject_flaw touches only its run") {
  const auto clean = walk({});
  auto bad = clean;
  std::mt19937_64 rng(5);
  const auto f = inject_flaw(bad, 30, 6, rng);
  CHECK(f.start == 30);
  CHECK(f.end == 35);
  for (std::size_t t = 0; t < clean.size(); ++t) {
    const bool inside = int(t) >= f.start && int(t) <= f.end;
    CHECK(same_frame(clean.frames[t], bad.frames[t]) != inside);
  }
}

TEST_CASE("rendered masks match the clip") {
  const auto& skel = motion::desk_humanoid();
  const auto seq = walk({});
  const auto cam = observing_camera(skel, seq);
  const auto masks = render_masks(cam, skel, seq, 16);
  REQUIRE(masks.size() == seq.size());
  const auto mps = bench::sequence_mps(skel, seq, masks, cam, 16);
  CHECK(mps.mean == doctest::Approx(1.0));

  auto bad = seq;
  std::mt19937_64 rng(5);
  const auto f = inject_flaw(bad, 40, 5, rng);
  const auto flawed = bench::sequence_mps(skel, bad, masks, cam, 16);
  for (int t = f.start; t <= f.end; ++t) CHECK(*flawed.values[t] < 0.5);
}
