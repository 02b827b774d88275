#include <gtest/gtest.h>

#include "support.hpp"

using namespace baeoed;
using testing_support::Gen;

namespace {

BlackBoxSpec copy_spec() {
  BlackBoxSpec spec;
  spec.executable = COPY_MODEL;
  spec.timeout_seconds = 60;
  return spec;
}

}  // namespace

TEST(BlackBox, IdentityModelCopiesParams) {
  Matrix params(2, 2);
  params << 1, 2, 3, 4;
  const Ensemble e = run_black_box(copy_spec(), params, 5);
  EXPECT_EQ(e.accurate_data, params);
  EXPECT_EQ(e.meta.sensors, 2u);
  EXPECT_EQ(e.meta.time_steps, 1u);
}

TEST(BlackBox, FailingModelReportsExitCodeAndStderr) {
  BlackBoxSpec spec;
  spec.executable = FAILING_MODEL;
  try {
    run_black_box(spec, Matrix::Ones(4, 1), 0);
    FAIL() << "expected SubprocessFailure";
  } catch (const SubprocessFailure& err) {
    EXPECT_EQ(err.exit_code(), 3);
    EXPECT_NE(err.captured_stderr().find("model diverged"), std::string::npos);
    EXPECT_EQ(err.error_class(), ErrorClass::subprocess);
  }
}

TEST(BlackBox, ResultDoesNotDependOnParallelism) {
  Gen gen(8);
  const Matrix params = gen.normal(100, 3);
  auto spec = copy_spec();
  spec.rows_per_call = 7;
  spec.max_parallel = 1;
  const Ensemble serial = run_black_box(spec, params, 42);
  spec.max_parallel = 4;
  const Ensemble parallel = run_black_box(spec, params, 42);
  EXPECT_EQ(serial.accurate_data, parallel.accurate_data);
  EXPECT_EQ(parallel.accurate_data, params);
}

TEST(BlackBox, MissingExecutableIsRejectedBeforeRunning) {
  BlackBoxSpec spec;
  spec.executable = "/definitely/not/a/model";
  EXPECT_THROW(check_black_box(spec), InvalidArgument);
  EXPECT_THROW(run_black_box(spec, Matrix::Ones(2, 1), 0), InvalidArgument);
}

TEST(BlackBox, NonFiniteParamsAreRejected) {
  Matrix params = Matrix::Ones(2, 1);
  params(1, 0) = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(run_black_box(copy_spec(), params, 0), NonFiniteValue);
}

TEST(BlackBox, DerivedSeedsAreDistinctAndStable) {
  EXPECT_EQ(derive_seed(1, 0), derive_seed(1, 0));
  EXPECT_NE(derive_seed(1, 0), derive_seed(1, 1));
  EXPECT_NE(derive_seed(1, 0), derive_seed(2, 0));
}
