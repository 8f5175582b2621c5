#include <gtest/gtest.h>

#include <numeric>

#include "hmil/data.hpp"
#include "hmil/error.hpp"
#include "support.hpp"

namespace hmil {
namespace {

using testing::Rng;

Matrixf row(std::initializer_list<float> values) {
  Matrixf m(1, static_cast<Eigen::Index>(values.size()));
  Eigen::Index i = 0;
  for (float v : values) m(0, i++) = v;
  return m;
}

DataNode three_bags() {
  return make_bag(make_dense(row({0, 1, 2, 3, 4})), {{0, 2}, {2, 2}, {2, 5}});
}

bool has_error(ErrorKind kind, const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind() == kind;
  }
  return false;
}

TEST(SampleCount, ArrayBagProduct) {
  EXPECT_EQ(sample_count(make_dense(Matrixf::Zero(2, 3))), 3u);
  EXPECT_EQ(sample_count(three_bags()), 3u);
  auto bag = make_bag(make_dense(Matrixf::Zero(1, 6)), {{0, 1}, {1, 2}, {2, 4}, {4, 6}});
  EXPECT_EQ(sample_count(make_product({{"a", make_dense(Matrixf::Zero(2, 4))}, {"b", bag}})), 4u);
}

TEST(Concat, StacksColumns) {
  Matrixf a(2, 1), b(2, 1);
  a << 1, 2;
  b << 3, 4;
  const DataNode out = concat_samples(std::vector<DataNode>{make_dense(a), make_dense(b)});
  Matrixf expected(2, 2);
  expected << 1, 3, 2, 4;
  EXPECT_EQ(std::get<DenseMatrix>(out.get_if<ArrayNode>()->data).values, expected);
}

TEST(Concat, RebasesSegments) {
  const DataNode a = make_bag(make_dense(row({1, 2})), {{0, 2}});
  const DataNode b = make_bag(make_dense(row({3})), {{0, 1}});
  const DataNode out = concat_samples(std::vector<DataNode>{a, b});
  const auto* bag = out.get_if<BagNode>();
  ASSERT_NE(bag, nullptr);
  EXPECT_EQ(bag->segments, (std::vector<Segment>{{0, 2}, {2, 3}}));
  EXPECT_EQ(sample_count(*bag->child), 3u);
}

TEST(Concat, MismatchedVariantsFail) {
  const std::vector<DataNode> xs{make_dense(row({1})), three_bags()};
  EXPECT_TRUE(has_error(ErrorKind::kShapeMismatch, [&] { concat_samples(xs); }));
}

TEST(Concat, MismatchedKeysFail) {
  const std::vector<DataNode> xs{make_product({{"a", make_dense(row({1}))}}),
                                 make_product({{"b", make_dense(row({1}))}})};
  EXPECT_TRUE(has_error(ErrorKind::kShapeMismatch, [&] { concat_samples(xs); }));
}

TEST(Slice, IdentityIsEqual) {
  const DataNode n = three_bags();
  const std::vector<std::size_t> all{0, 1, 2};
  EXPECT_EQ(slice(n, all), n);
}

TEST(Slice, GathersBagChildren) {
  const std::vector<std::size_t> pick{2, 0};
  const DataNode out = slice(three_bags(), pick);
  const auto* bag = out.get_if<BagNode>();
  ASSERT_NE(bag, nullptr);
  EXPECT_EQ(bag->segments, (std::vector<Segment>{{0, 3}, {3, 5}}));
  EXPECT_EQ(std::get<DenseMatrix>(bag->child->get_if<ArrayNode>()->data).values,
            row({2, 3, 4, 0, 1}));
}

TEST(Slice, OutOfRangeFails) {
  const std::vector<std::size_t> pick{3};
  EXPECT_TRUE(has_error(ErrorKind::kIndexOutOfRange, [&] { slice(three_bags(), pick); }));
}

TEST(Validate, WellFormedIsOk) { EXPECT_TRUE(validate(three_bags()).empty()); }

TEST(Validate, UncoveredRangeIsReported) {
  BagNode bag{std::make_shared<DataNode>(make_dense(Matrixf::Zero(1, 5))), {{0, 4}}};
  const auto v = validate(DataNode(bag));
  ASSERT_FALSE(v.empty());
  EXPECT_EQ(v.front().path, "$");
  EXPECT_NE(v.front().message.find("[4,5)"), std::string::npos) << v.front().message;
}

TEST(Validate, ProductCountMismatchNamesBothKeys) {
  ProductNode p{{"left", "right"},
                {make_dense(Matrixf::Zero(1, 2)), make_dense(Matrixf::Zero(1, 3))}};
  const auto v = validate(DataNode(p));
  ASSERT_FALSE(v.empty());
  EXPECT_NE(v.front().message.find("left"), std::string::npos);
  EXPECT_NE(v.front().message.find("right"), std::string::npos);
}

TEST(Validate, OneHotOverflowAndNGramOrder) {
  ArrayNode onehot{OneHotMatrix{3, {0, 5}}, {false, false}};
  EXPECT_FALSE(validate(DataNode(onehot)).empty());
  NGramMatrix ng;
  ng.hash_dim = 10;
  ng.offsets = {0, 2};
  ng.indices = {4, 2};
  ng.values = {1, 1};
  EXPECT_FALSE(validate(DataNode(ArrayNode{ng, {false}})).empty());
}

// Property tests over data produced by random extractors.

class DataProperties : public ::testing::TestWithParam<int> {};

TEST_P(DataProperties, PermutationRoundTrip) {
  Rng rng(static_cast<std::uint64_t>(GetParam()));
  const auto c = testing::random_case(rng, 1 + testing::uniform(rng, 0, 12));
  const std::size_t n = sample_count(c.data);
  std::vector<std::size_t> p(n);
  std::iota(p.begin(), p.end(), 0);
  std::shuffle(p.begin(), p.end(), rng);
  std::vector<std::size_t> inverse(n);
  for (std::size_t i = 0; i < n; ++i) inverse[p[i]] = i;
  const DataNode shuffled = slice(c.data, p);
  EXPECT_TRUE(validate(shuffled).empty());
  EXPECT_EQ(slice(shuffled, inverse), c.data);
}

TEST_P(DataProperties, SplitAndConcat) {
  Rng rng(1000 + static_cast<std::uint64_t>(GetParam()));
  const auto c = testing::random_case(rng, 1 + testing::uniform(rng, 0, 10));
  const std::size_t n = sample_count(c.data);
  for (std::size_t k = 0; k <= n; ++k) {
    std::vector<std::size_t> head(k), tail(n - k);
    std::iota(head.begin(), head.end(), 0);
    std::iota(tail.begin(), tail.end(), k);
    const std::vector<DataNode> parts{slice(c.data, head), slice(c.data, tail)};
    const DataNode joined = concat_samples(parts);
    EXPECT_EQ(sample_count(joined), sample_count(parts[0]) + sample_count(parts[1]));
    EXPECT_TRUE(validate(joined).empty());
    EXPECT_EQ(joined, c.data) << "split at " << k;
  }
}

INSTANTIATE_TEST_SUITE_P(Random, DataProperties, ::testing::Range(0, 25));

}  // namespace
}  // namespace hmil
