#include <catch2/catch_amalgamated.hpp>

#include "gsct/core.hpp"
#include "gsct/rng.hpp"
#include "oracles.hpp"

using namespace gsct;

namespace {

GaussianCloud one_splat(const Vec3& pos, const Vec3& log_scale, const Vec4& quat, double rho) {
  GaussianCloud cloud;
  cloud.push_back(pos, log_scale, quat, rho);
  return cloud;
}

}  // namespace

TEST_CASE("activate maps raw storage to valid splat parameters") {
  const GaussianCloud cloud =
      one_splat(Vec3(1, 2, 3), Vec3::Zero(), Vec4(2, 0, 0, 0), -0.3);
  const ActivatedSplat act = activate(cloud, 0);
  CHECK(act.scales.isApprox(Vec3(1, 1, 1)));            // exp(0) = 1
  CHECK(act.unit_quat.isApprox(Vec4(1, 0, 0, 0)));      // normalized
  CHECK(act.density == 0.0);                            // clamped at zero
  CHECK(act.position == Vec3(1, 2, 3));
}

TEST_CASE("activate rejects bad input") {
  GaussianCloud cloud = one_splat(Vec3::Zero(), Vec3::Zero(), Vec4(1, 0, 0, 0), 1.0);
  CHECK_THROWS_AS(activate(cloud, 1), contract_error);

  cloud.positions[0][1] = std::nan("");
  try {
    activate(cloud, 0);
    FAIL("expected contract_error");
  } catch (const contract_error& e) {
    CHECK(std::string(e.what()).find("0") != std::string::npos);  // names the splat index
  }
}

TEST_CASE("activate is idempotent") {
  Rng rng(21);
  for (int trial = 0; trial < 20; ++trial) {
    GaussianCloud cloud = oracles::random_cloud(100 + trial, 1);
    const ActivatedSplat first = activate(cloud, 0);
    GaussianCloud re;
    re.push_back(first.position, first.scales.array().log(), first.unit_quat, first.density);
    const ActivatedSplat second = activate(re, 0);
    CHECK((second.position - first.position).norm() < 1e-7);
    CHECK((second.scales - first.scales).norm() < 1e-7);
    CHECK((second.unit_quat - first.unit_quat).norm() < 1e-7);
    CHECK(std::abs(second.density - first.density) < 1e-7);
  }
}

TEST_CASE("covariance of axis-aligned splats is diagonal") {
  const Mat3 sigma = covariance(Vec3(1, 2, 3), Vec4(1, 0, 0, 0));
  CHECK(sigma.isApprox(Vec3(1, 4, 9).asDiagonal().toDenseMatrix()));
}

TEST_CASE("covariance of an isotropic splat ignores rotation") {
  Rng rng(7);
  for (int trial = 0; trial < 10; ++trial) {
    Vec4 q(rng.normal(), rng.normal(), rng.normal(), rng.normal());
    q.normalize();
    CHECK(covariance(Vec3(1, 1, 1), q).isApprox(Mat3::Identity(), 1e-12));
  }
}

TEST_CASE("covariance under a 90-degree z rotation matches the explicit oracle") {
  // Oracle: hand-written rotation matrix multiplication.
  const double angle = M_PI / 2.0;
  Mat3 rot_oracle;
  rot_oracle << std::cos(angle), -std::sin(angle), 0, std::sin(angle), std::cos(angle), 0, 0, 0,
      1;
  const Mat3 expected =
      rot_oracle * Vec3(1, 4, 1).asDiagonal().toDenseMatrix() * rot_oracle.transpose();
  CHECK(expected.isApprox(Vec3(4, 1, 1).asDiagonal().toDenseMatrix(), 1e-12));

  const Vec4 quat(std::cos(angle / 2), 0, 0, std::sin(angle / 2));
  CHECK(covariance(Vec3(1, 2, 1), quat).isApprox(expected, 1e-12));
}

TEST_CASE("covariance is positive definite for random parameters") {
  for (int trial = 0; trial < 50; ++trial) {
    const GaussianCloud cloud = oracles::random_cloud(300 + trial, 1, 5.0, 0.05, 10.0);
    const ActivatedSplat act = activate(cloud, 0);
    const Mat3 sigma = covariance(act.scales, act.unit_quat);
    Eigen::SelfAdjointEigenSolver<Mat3> eig;
    eig.computeDirect(sigma);
    CHECK(eig.eigenvalues().minCoeff() > 0.0);
    CHECK(sigma.isApprox(sigma.transpose()));
  }
}

TEST_CASE("quaternion double cover: q and -q give the same covariance") {
  for (int trial = 0; trial < 20; ++trial) {
    const GaussianCloud cloud = oracles::random_cloud(400 + trial, 1);
    const ActivatedSplat act = activate(cloud, 0);
    const Mat3 a = covariance(act.scales, act.unit_quat);
    const Mat3 b = covariance(act.scales, -act.unit_quat);
    CHECK(a.isApprox(b, 1e-13));
  }
}

TEST_CASE("scene_extent is the half-diagonal of the position bounding box") {
  GaussianCloud single = one_splat(Vec3(3, -1, 2), Vec3::Zero(), Vec4(1, 0, 0, 0), 1.0);
  CHECK(scene_extent(single) == 0.0);

  GaussianCloud pair = single;
  pair.positions[0] = Vec3(0, 0, 0);
  pair.push_back(Vec3(2, 0, 0), Vec3::Zero(), Vec4(1, 0, 0, 0), 1.0);
  CHECK(scene_extent(pair) == Catch::Approx(1.0));

  GaussianCloud cube;
  for (int corner = 0; corner < 8; ++corner) {
    cube.push_back(Vec3(corner & 1, (corner >> 1) & 1, (corner >> 2) & 1), Vec3::Zero(),
                   Vec4(1, 0, 0, 0), 1.0);
  }
  CHECK(scene_extent(cube) == Catch::Approx(std::sqrt(3.0) / 2.0));

  CHECK_THROWS_AS(scene_extent(GaussianCloud{}), contract_error);
}

TEST_CASE("cloud validation catches arrays out of lockstep") {
  GaussianCloud cloud = one_splat(Vec3::Zero(), Vec3::Zero(), Vec4(1, 0, 0, 0), 1.0);
  cloud.raw_densities.push_back(0.5);
  CHECK_THROWS_AS(cloud.validate(), contract_error);
}
