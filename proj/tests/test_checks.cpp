#include <gtest/gtest.h>

#include "grlab/checks.hpp"

using namespace grlab;

class CheckSuite : public ::testing::TestWithParam<std::string> {};

TEST_P(CheckSuite, AllChecksPass) {
  const auto results = checks::run_suite(GetParam());
  EXPECT_FALSE(results.empty());
  for (const auto& r : results) {
    EXPECT_TRUE(r.passed) << r.name << ": measured " << r.measured << ", tolerance " << r.tolerance;
    EXPECT_EQ(r.suite, GetParam());
  }
}

INSTANTIATE_TEST_SUITE_P(Suites, CheckSuite, ::testing::ValuesIn(checks::suite_names()),
                         [](const auto& info) {
                           std::string n = info.param;
                           for (char& c : n) if (c == '-') c = '_';
                           return n;
                         });

TEST(CheckSuites, UnknownNameIsConfigError) { EXPECT_THROW(checks::run_suite("nope"), ConfigError); }

TEST(CheckSuites, OtherSeedsPass) {
  for (std::uint64_t seed : {2u, 3u}) {
    for (const auto& r : checks::run_suite("identities", seed)) EXPECT_TRUE(r.passed) << r.name;
    for (const auto& r : checks::run_suite("gradients", seed)) EXPECT_TRUE(r.passed) << r.name;
  }
}
