#include <doctest.h>

#include <cmath>
#include <random>

#include <Eigen/QR>

#include "pmr/error.hpp"
#include "pmr/motion/io.hpp"
#include "pmr/motion/motion.hpp"
#include "pmr/motion/rotation.hpp"

using namespace pmr;
using namespace pmr::motion;

namespace {

Mat3 random_rotation(std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Eigen::Quaterniond q(n(rng), n(rng), n(rng), n(rng));
  q.normalize();
  return q.toRotationMatrix();
}

// Independent orthonormalization: QR of the 3x2 matrix [a1 a2], columns
// sign-fixed so the diagonal of R is positive.
Mat3 qr_orthonormalize(const Rot6& r) {
  Eigen::Matrix<double, 3, 2> A;
  A.col(0) = r.head<3>();
  A.col(1) = r.tail<3>();
  Eigen::HouseholderQR<Eigen::Matrix<double, 3, 2>> qr(A);
  Mat3 Q = qr.householderQ();
  const Eigen::Matrix<double, 3, 2> R = Q.transpose() * A;
  for (int c = 0; c < 2; ++c) {
    if (R(c, c) < 0) Q.col(c) *= -1.0;
  }
  Mat3 out;
  out.col(0) = Q.col(0);
  out.col(1) = Q.col(1);
  out.col(2) = Q.col(0).cross(Q.col(1));
  return out;
}

Rot6 r6(double a, double b, double c, double d, double e, double f) {
  Rot6 r;
  r << a, b, c, d, e, f;
  return r;
}

Skeleton chain2() {
  return Skeleton("chain", {{"root", -1, {0, 0, 0}, 0.05}, {"tip", 0, {0, 0, 1}, 0.05}}, {1}, 1);
}

}  // namespace

TEST_CASE("rot6d_to_matrix worked examples") {
  CHECK(rot6d_to_matrix(r6(1, 0, 0, 0, 1, 0)).isApprox(Mat3::Identity(), 1e-15));

  Mat3 rz90;
  rz90 << 0, -1, 0, 1, 0, 0, 0, 0, 1;
  CHECK((rot6d_to_matrix(r6(0, 1, 0, -1, 0, 0)) - rz90).cwiseAbs().maxCoeff() < 1e-15);

  const Mat3 R = rot6d_to_matrix(r6(2, 0, 0, 0.5, 3, 0));
  CHECK((R - Mat3::Identity()).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((R.transpose() * R - Mat3::Identity()).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("rot6d_to_matrix agrees with a QR orthonormalization") {
  std::mt19937_64 rng(7);
  std::normal_distribution<double> n(0.0, 1.0);
  for (int k = 0; k < 500; ++k) {
    const Rot6 r = r6(n(rng), n(rng), n(rng), n(rng), n(rng), n(rng));
    const Mat3 R = rot6d_to_matrix(r);
    CHECK((R - qr_orthonormalize(r)).cwiseAbs().maxCoeff() < 1e-10);
    CHECK(std::abs(R.determinant() - 1.0) < 1e-12);
  }
}

TEST_CASE("degenerate 6D inputs are rejected") {
  CHECK_THROWS_AS(rot6d_to_matrix(r6(0, 0, 0, 0, 1, 0)), DegenerateRotation);
  CHECK_THROWS_AS(rot6d_to_matrix(r6(1, 0, 0, 2, 0, 0)), DegenerateRotation);
  CHECK_THROWS_AS(rot6d_to_matrix(r6(1, 2, 3, 0, 0, 0)), DegenerateRotation);
  CHECK_THROWS_AS(rotation_difference(r6(0, 0, 0, 0, 1, 0), identity_rot6d()), DegenerateRotation);
}

TEST_CASE("matrix_to_rot6d") {
  CHECK(matrix_to_rot6d(Mat3::Identity()) == identity_rot6d());
  const Mat3 rx180 = Eigen::AngleAxisd(M_PI, Vec3::UnitX()).toRotationMatrix();
  CHECK((matrix_to_rot6d(rx180) - r6(1, 0, 0, 0, -1, 0)).cwiseAbs().maxCoeff() < 1e-15);

  Mat3 bad = Mat3::Identity();
  bad(0, 1) = 0.01;
  CHECK_THROWS_AS(matrix_to_rot6d(bad), ValidationError);
  CHECK_THROWS_AS(matrix_to_rot6d(-Mat3::Identity()), ValidationError);

  std::mt19937_64 rng(11);
  double worst = 0.0;
  for (int k = 0; k < 1000; ++k) {
    const Mat3 R = random_rotation(rng);
    worst = std::max(worst, (rot6d_to_matrix(matrix_to_rot6d(R)) - R).cwiseAbs().maxCoeff());
  }
  CHECK(worst < 1e-9);
}

TEST_CASE("rot6d backward matches central differences") {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n(0.0, 1.0);
  for (int k = 0; k < 50; ++k) {
    const Rot6 r = r6(n(rng), n(rng), n(rng), n(rng), n(rng), n(rng));
    Mat3 G;
    for (int i = 0; i < 9; ++i) G(i) = n(rng);
    const Rot6 analytic = rot6d_to_matrix_backward(r, G);
    for (int i = 0; i < 6; ++i) {
      const double h = 1e-6;
      Rot6 rp = r, rm = r;
      rp[i] += h;
      rm[i] -= h;
      const double fd = ((rot6d_to_matrix(rp) - rot6d_to_matrix(rm)).cwiseProduct(G).sum()) / (2 * h);
      CHECK(analytic[i] == doctest::Approx(fd).epsilon(1e-6));
    }
  }
}

TEST_CASE("rotation_difference") {
  const Rot6 I = identity_rot6d();
  CHECK(rotation_difference(I, I) == 0.0);
  for (const Vec3& axis : {Vec3(Vec3::UnitX()), Vec3(Vec3::UnitY()), Vec3(Vec3(1, 2, -1).normalized())}) {
    const Rot6 r = matrix_to_rot6d(Eigen::AngleAxisd(M_PI / 2, axis).toRotationMatrix());
    CHECK(rotation_difference(I, r) == doctest::Approx(M_PI / 2).epsilon(1e-12));
  }
  std::mt19937_64 rng(5);
  for (int k = 0; k < 1000; ++k) {
    const Rot6 a = matrix_to_rot6d(random_rotation(rng));
    const Rot6 b = matrix_to_rot6d(random_rotation(rng));
    const Rot6 c = matrix_to_rot6d(random_rotation(rng));
    const double ab = rotation_difference(a, b);
    CHECK(ab >= 0.0);
    CHECK(ab <= M_PI + 1e-12);
    CHECK(rotation_difference(a, c) <= ab + rotation_difference(b, c) + 1e-9);
  }
}

TEST_CASE("forward_kinematics on a two-joint chain") {
  const Skeleton s = chain2();
  MotionFrame f = MotionFrame::identity(2);
  auto pose = forward_kinematics(s, f);
  CHECK((pose.positions[1] - Vec3(0, 0, 1)).norm() == 0.0);

  f.rotations[0] = matrix_to_rot6d(Eigen::AngleAxisd(M_PI / 2, Vec3::UnitX()).toRotationMatrix());
  pose = forward_kinematics(s, f);
  CHECK((pose.positions[1] - Vec3(0, -1, 0)).norm() < 1e-15);

  MotionFrame g = MotionFrame::identity(3);
  CHECK_THROWS_AS(forward_kinematics(s, g), ShapeError);
}

TEST_CASE("forward_kinematics equivariance on the desk humanoid") {
  const Skeleton& s = desk_humanoid();
  std::mt19937_64 rng(9);
  for (int k = 0; k < 50; ++k) {
    MotionFrame f = MotionFrame::identity(s.joint_count());
    for (auto& r : f.rotations) r = matrix_to_rot6d(random_rotation(rng));
    f.translation = Vec3(0.3, -0.2, 0.9);
    const auto base = forward_kinematics(s, f);

    MotionFrame moved = f;
    moved.translation += Vec3(5, 0, 0);
    const auto pm = forward_kinematics(s, moved);
    for (std::size_t j = 0; j < s.joint_count(); ++j) {
      CHECK((pm.positions[j] - base.positions[j] - Vec3(5, 0, 0)).norm() < 1e-12);
    }

    const Mat3 Q = random_rotation(rng);
    MotionFrame turned = f;
    turned.rotations[0] = matrix_to_rot6d(Q * rot6d_to_matrix(f.rotations[0]));
    const auto pt = forward_kinematics(s, turned);
    for (std::size_t j = 0; j < s.joint_count(); ++j) {
      const Vec3 expect = f.translation + Q * (base.positions[j] - f.translation);
      CHECK((pt.positions[j] - expect).norm() < 1e-12);
    }
  }
}

TEST_CASE("finite_velocities") {
  const Skeleton s = chain2();
  MotionSequence seq;
  seq.fps = 30.0;
  for (int t = 0; t < 5; ++t) seq.frames.push_back(MotionFrame::identity(2));
  for (const auto& v : finite_velocities(s, seq)) {
    for (std::size_t j = 0; j < 2; ++j) {
      CHECK(v.linear[j].norm() == 0.0);
      CHECK(v.angular[j].norm() == 0.0);
    }
  }

  for (int t = 0; t < 5; ++t) seq.frames[t].translation = Vec3(0.01 * t, 0, 0);
  auto vel = finite_velocities(s, seq);
  for (const auto& v : vel) CHECK(v.linear[0].x() == doctest::Approx(0.3).epsilon(1e-12));

  const double deg = M_PI / 180.0;
  for (int t = 0; t < 5; ++t) {
    seq.frames[t].translation.setZero();
    seq.frames[t].rotations[1] = matrix_to_rot6d(Eigen::AngleAxisd(deg * t, Vec3::UnitZ()).toRotationMatrix());
  }
  vel = finite_velocities(s, seq);
  for (const auto& v : vel) {
    CHECK((v.angular[1] - Vec3(0, 0, 30.0 * deg)).norm() < 1e-9);
    CHECK(v.angular[0].norm() == 0.0);
  }
  // last frame copies the previous one
  CHECK(vel[4].angular[1] == vel[3].angular[1]);

  seq.frames.resize(1);
  CHECK_THROWS_AS(finite_velocities(s, seq), InsufficientFrames);
}

TEST_CASE("135-d frame codec") {
  const MotionFrame id = MotionFrame::identity(22);
  const auto v = encode_frame(id);
  REQUIRE(v.size() == 135);
  CHECK(v[0] == 0.0);
  CHECK(v[1] == 0.0);
  CHECK(v[2] == 0.0);
  for (std::size_t j = 0; j < 22; ++j) {
    const double expect[6] = {1, 0, 0, 0, 1, 0};
    for (int k = 0; k < 6; ++k) CHECK(v[3 + 6 * j + k] == expect[k]);
  }

  std::mt19937_64 rng(13);
  std::normal_distribution<double> n(0.0, 1.0);
  for (int k = 0; k < 100; ++k) {
    MotionFrame f = MotionFrame::identity(22);
    f.translation = Vec3(n(rng), n(rng), n(rng));
    for (auto& r : f.rotations) r = matrix_to_rot6d(random_rotation(rng));
    const MotionFrame g = decode_frame(encode_frame(f));
    CHECK(g.translation == f.translation);
    for (std::size_t j = 0; j < 22; ++j) CHECK(g.rotations[j] == f.rotations[j]);
  }

  std::vector<double> short_vec(134, 0.0);
  CHECK_THROWS_AS(decode_frame(short_vec), ShapeError);
  CHECK_THROWS_AS(encode_frame(MotionFrame::identity(21)), ShapeError);
}

TEST_CASE("skeleton validation") {
  CHECK_THROWS_AS(Skeleton("bad", {{"a", -1, {0, 0, 0}, 0.1}, {"b", 1, {0, 0, 1}, 0.1}}, {1}, 1),
                  ValidationError);
  CHECK_THROWS_AS(Skeleton("bad", {{"a", -1, {0, 0, 0}, 0.1}, {"b", -1, {0, 0, 1}, 0.1}}, {1}, 1),
                  ValidationError);
  CHECK_THROWS_AS(Skeleton("bad", {{"a", -1, {0, 0, 0}, 0.1}, {"b", 0, {0, 0, 1}, 0.0}}, {1}, 1),
                  ValidationError);

  const Skeleton& s = desk_humanoid();
  CHECK(s.joint_count() == 22);
  CHECK(s.feet().size() == 4);
  CHECK(s.joint(s.head()).name == "head");
  CHECK(s.contact_joints().size() == 7);  // 4 feet, 2 wrists, head
}

TEST_CASE("bundled skeleton file matches the built-in definition") {
  const Skeleton file = load_skeleton(std::string(PMR_DATA_DIR) + "/desk_humanoid.json");
  const Skeleton& s = desk_humanoid();
  REQUIRE(file.joint_count() == s.joint_count());
  for (std::size_t j = 0; j < s.joint_count(); ++j) {
    CHECK(file.joint(j).name == s.joint(j).name);
    CHECK(file.parent(j) == s.parent(j));
    CHECK(file.joint(j).offset == s.joint(j).offset);
    CHECK(file.joint(j).radius == s.joint(j).radius);
  }
  CHECK(file.feet() == s.feet());
  CHECK(file.head() == s.head());
}

TEST_CASE("motion JSON round trip") {
  MotionSequence seq;
  seq.fps = 30;
  seq.skeleton_id = "desk_humanoid";
  std::mt19937_64 rng(1);
  for (int t = 0; t < 3; ++t) {
    MotionFrame f = MotionFrame::identity(22);
    f.translation = Vec3(0.1 * t, 0.2, 0.9);
    f.rotations[3] = matrix_to_rot6d(random_rotation(rng));
    seq.frames.push_back(f);
  }
  const MotionSequence back = motion_from_json(Json::parse(motion_to_json(seq).dump()));
  REQUIRE(back.size() == 3);
  CHECK(back.fps == 30);
  CHECK(back.frames[2].translation == seq.frames[2].translation);
  CHECK(back.frames[1].rotations[3] == seq.frames[1].rotations[3]);
  CHECK_THROWS_AS(motion_from_json(Json::parse(R"({"fps": 0, "frames": []})")), ValidationError);
}
