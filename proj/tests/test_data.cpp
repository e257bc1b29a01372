#include "support.hpp"

#include "hybridtrial/data.hpp"
#include "hybridtrial/error.hpp"

#include <doctest.h>

#include <numeric>
#include <sstream>

using namespace hybridtrial;

namespace {

ErrorCode load_error(const std::string& csv, const ColumnSchema& schema = {}) {
  std::istringstream in(csv);
  try {
    load_dataset(in, schema);
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an error");
  return ErrorCode::Io;
}

TrialData from_indicators(std::vector<int> s, std::vector<int> a) {
  const Index n = static_cast<Index>(s.size());
  CovariateMatrix x = CovariateMatrix::Zero(n, 1);
  Eigen::VectorXi av(n), sv(n);
  for (Index i = 0; i < n; ++i) {
    x(i, 0) = static_cast<double>(i);
    av[i] = a[i];
    sv[i] = s[i];
  }
  return TrialData(x, Eigen::VectorXd::Zero(n), av, sv);
}

}  // namespace

TEST_SUITE("data") {

TEST_CASE("four-row csv parses") {
  std::istringstream in("y,a,s,x1\n1.5,1,1,0.2\n0.5,0,1,-1\n2,0,1,3\n0.25,0,0,1e-3\n");
  const TrialData d = load_dataset(in);
  CHECK(d.size() == 4);
  CHECK(d.dim() == 1);
  CHECK(d.n_rct() == 3);
  CHECK(d.outcome()[3] == 0.25);
  CHECK(d.row(3)(0) == 1e-3);
  // ids default to row numbers
  CHECK(d.unit_id(0) == "0");
  CHECK(d.unit_id(3) == "3");
}

TEST_CASE("treated external control is rejected") {
  CHECK(load_error("y,a,s,x1\n1,1,1,0\n0,0,1,1\n2,1,0,2\n") == ErrorCode::EcTreated);
}

TEST_CASE("missing column") {
  CHECK(load_error("y,a,x1\n1,1,0\n0,0,1\n") == ErrorCode::MissingColumn);
  ColumnSchema schema;
  schema.covariates = {"x9"};
  CHECK(load_error("y,a,s,x1\n1,1,1,0\n", schema) == ErrorCode::MissingColumn);
}

TEST_CASE("bad values") {
  CHECK(load_error("y,a,s,x1\n1,2,1,0\n") == ErrorCode::BadValue);
  CHECK(load_error("y,a,s,x1\nabc,1,1,0\n") == ErrorCode::BadValue);
  CHECK(load_error("y,a,s,x1\n1,1,1,\n") == ErrorCode::BadValue);
}

TEST_CASE("validation collects every issue") {
  std::istringstream in("y,a,s,x1\n1,2,1,0\n1,1,0,0\nq,0,1,1\n");
  const auto issues = validate_dataset(in);
  REQUIRE(issues.size() == 3);
  CHECK(issues[0].row == 1);
  CHECK(issues[0].code == "BadValue");
  CHECK(issues[1].code == "EcTreated");
  CHECK(issues[2].column == "y");
}

TEST_CASE("custom schema and id column") {
  std::istringstream in("id,out,trt,rct,age,junk\nA7,1,1,1,30,9\nB2,2,0,1,40,9\nC1,3,0,0,50,9\n");
  ColumnSchema schema;
  schema.outcome = "out";
  schema.assignment = "trt";
  schema.sample = "rct";
  schema.covariates = {"age"};
  schema.id_column = "id";
  const TrialData d = load_dataset(in, schema);
  CHECK(d.dim() == 1);
  CHECK(d.unit_id(2) == "C1");
  CHECK(d.row(1)(0) == 40.0);
}

TEST_CASE("partition by definition") {
  const IndexSets sets = partition(from_indicators({1, 1, 1, 0}, {1, 0, 0, 0}));
  CHECK(sets.treated == IndexList{0});
  CHECK(sets.rct_controls == IndexList{1, 2});
  CHECK(sets.rct_all == IndexList{0, 1, 2});
  CHECK(sets.external == IndexList{3});
}

TEST_CASE("no externals is legal") {
  const IndexSets sets = partition(from_indicators({1, 1, 1, 1}, {1, 0, 1, 0}));
  CHECK(sets.external.empty());
}

TEST_CASE("empty control group") {
  CHECK_THROWS_AS(partition(from_indicators({1, 1, 0}, {1, 1, 0})), Error);
  try {
    partition(from_indicators({1, 1, 0}, {1, 1, 0}));
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::EmptyGroup);
  }
}

TEST_CASE("partition is a bijection") {
  Rng rng(7);
  for (int rep = 0; rep < 20; ++rep) {
    const TrialData d = testsupport::random_trial({}, rng);
    const IndexSets sets = partition(d);
    std::vector<int> seen(static_cast<std::size_t>(d.size()), 0);
    for (const auto* list : {&sets.treated, &sets.rct_controls, &sets.external}) {
      for (const Index i : *list) ++seen[static_cast<std::size_t>(i)];
    }
    CHECK(std::all_of(seen.begin(), seen.end(), [](int c) { return c == 1; }));
  }
}

TEST_CASE("write then load round-trips exactly") {
  Rng rng(11);
  testsupport::Layout layout;
  layout.p = 3;
  const TrialData d = testsupport::random_trial(layout, rng);
  ColumnSchema schema;
  schema.id_column = "id";
  std::stringstream buffer;
  write_dataset(buffer, d, schema);
  const TrialData back = load_dataset(buffer, schema);
  CHECK(back.covariates() == d.covariates());
  CHECK(back.outcome() == d.outcome());
  CHECK(back.assignment() == d.assignment());
  CHECK(back.sample_indicator() == d.sample_indicator());
  CHECK(back.unit_ids() == d.unit_ids());
}

TEST_CASE("design probability must be inside (0,1)") {
  CHECK_THROWS_AS(DesignSpec::bernoulli(0.0), Error);
  CHECK_THROWS_AS(DesignSpec::bernoulli(1.0), Error);
  CHECK(DesignSpec::bernoulli(2.0 / 3.0).probability() == 2.0 / 3.0);
}

}  // TEST_SUITE
