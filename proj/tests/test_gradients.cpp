#include "doctest.h"
#include "gradient_check.hpp"
#include "wmnet/attacks.hpp"
#include "oracles.hpp"

using namespace wmnet;

TEST_SUITE("gradients") {
  TEST_CASE("every layer primitive matches finite differences") {
    for (const std::uint64_t seed : {101u, 202u}) {
      const auto results = gradcheck::layer_suite(seed);
      CHECK(results.size() >= 25);
      for (const auto& r : results) {
        INFO(r.name << ": " << r.error);
        CHECK(r.error < 1e-3);
      }
    }
  }

  TEST_CASE("jpeg passes gradients straight through") {
    Rng rng(107);
    const Tensor w = oracle::uniform({8, 8}, rng);
    CHECK(jpeg_attack_backward(w) == w);
  }

  TEST_CASE("end-to-end loss gradient passes spot checks in every stage") {
    const gradcheck::PipelineReport report = gradcheck::pipeline_spot_check(2024, 5);
    for (const auto& stage : report.stages) {
      INFO("stage " << stage.name << " worst " << stage.worst_error);
      CHECK(stage.checked >= 5);
      CHECK(stage.worst_error < 1e-2);
    }
    CHECK(report.host_branch_gradient > 0.0);
    CHECK(report.mark_branch_gradient > 0.0);
  }
}
