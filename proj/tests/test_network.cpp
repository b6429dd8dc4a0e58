#include <gtest/gtest.h>

#include <fstream>

#include "kap/error.hpp"
#include "kap/network.hpp"
#include "support.hpp"

using namespace kap;

namespace {

const char* kSmallCnn = R"(name = small
input = 1x8x8
classes = 3
layer.0 = conv2d out=4 k=3 stride=1 pad=1
layer.1 = kap2d K=3 S=1 grid=2x2
layer.2 = noise sigma=0.1
layer.3 = relu
layer.4 = spatial_avg_pool size=2 stride=2
layer.5 = conv2d out=9 k=3 stride=1 pad=1
layer.6 = kmp K=3 S=1 grid=3x3
layer.7 = relu
layer.8 = spatial_avg_pool global
layer.9 = flatten
layer.10 = dense out=5
layer.11 = kap1d K=3 S=1
layer.12 = relu
layer.13 = dense out=3
)";

Tensor random_batch(std::size_t n, const Shape& sample, std::uint64_t seed) {
  Shape s{n};
  s.insert(s.end(), sample.begin(), sample.end());
  Rng rng(seed);
  Tensor t(s);
  for (auto& v : t.data()) v = rng.uniform();
  return t;
}

}  // namespace

TEST(Spec, ParseFormatRoundTrip) {
  const NetworkSpec spec = parse_network_spec(kSmallCnn);
  EXPECT_EQ(spec.layers.size(), 14u);
  EXPECT_EQ(spec.input_shape, (Shape{1, 8, 8}));
  EXPECT_EQ(parse_network_spec(format_network_spec(spec)), spec);
}

TEST(Spec, ParameterCountFormula) {
  const NetworkSpec spec = parse_network_spec(kSmallCnn);
  // conv 4*1*9+4, conv 9*4*9+9, dense 5*9+5, dense 3*5+3
  const std::size_t want = (4 * 9 + 4) + (9 * 4 * 9 + 9) + (5 * 9 + 5) + (3 * 5 + 3);
  EXPECT_EQ(count_parameters(spec), want);
  EXPECT_EQ(Network::build(spec, 1).parameter_count(), want);
}

TEST(Spec, UnknownKindsAndArgumentsRejected) {
  EXPECT_THROW(parse_layer("batchnorm"), ConfigError);
  EXPECT_THROW(parse_layer("conv2d out=4 dilation=2"), ConfigError);
  EXPECT_THROW(parse_layer("kap1d K=3 S=4"), ConfigError);
  EXPECT_THROW(parse_layer("noise sigma=-1"), ConfigError);
  EXPECT_THROW(parse_network_spec("input = 4\nclasses = 2\nlayer.1 = dense out=2\n"), ConfigError);
}

TEST(Spec, BuildErrorNamesLayer) {
  NetworkSpec spec = parse_network_spec("input = 1x8x8\nclasses = 2\nlayer.0 = conv2d out=4\nlayer.1 = dense out=2\n");
  try {
    infer_shapes(spec);
    FAIL() << "expected BuildError";
  } catch (const BuildError& e) {
    EXPECT_EQ(e.layer_index(), 1u);
  }
  spec = parse_network_spec("input = 1x8x8\nclasses = 2\nlayer.0 = conv2d out=5\nlayer.1 = kap2d K=3\n"
                            "layer.2 = flatten\nlayer.3 = dense out=2\n");
  try {
    infer_shapes(spec);
    FAIL() << "expected BuildError";
  } catch (const BuildError& e) {
    EXPECT_EQ(e.layer_index(), 1u);
  }
  spec = parse_network_spec("input = 6\nclasses = 2\nlayer.0 = dense out=3\n");
  EXPECT_THROW(infer_shapes(spec), BuildError);
}

TEST(Network, EvalIsDeterministic) {
  const Network net = Network::build(parse_network_spec(kSmallCnn), 3);
  const Tensor x = random_batch(4, {1, 8, 8}, 9);
  const Tensor a = net.logits(x);
  const Tensor b = net.logits(x);
  EXPECT_EQ(a.values(), b.values());
  EXPECT_EQ(a.shape(), (Shape{4, 3}));
}

TEST(Network, ZeroNoiseTrainEqualsEval) {
  const NetworkSpec spec = parse_network_spec(
      "input = 5\nclasses = 2\nlayer.0 = noise sigma=0\nlayer.1 = dense out=4\nlayer.2 = noise sigma=0\n"
      "layer.3 = relu\nlayer.4 = dense out=2\n");
  const Network net = Network::build(spec, 2);
  const Tensor x = random_batch(3, {5}, 1);
  Rng rng(5);
  Tape tape;
  ForwardOptions opts;
  opts.mode = Mode::train;
  opts.rng = &rng;
  const Tensor train_logits = tape.value(net.forward(tape, tape.constant(x), opts).logits);
  EXPECT_EQ(train_logits.values(), net.logits(x).values());
}

TEST(Network, TrainModeNoiseNeedsRng) {
  const Network net = Network::build(parse_network_spec(kSmallCnn), 3);
  Tape tape;
  ForwardOptions opts;
  opts.mode = Mode::train;
  EXPECT_THROW(net.forward(tape, tape.constant(random_batch(1, {1, 8, 8}, 1)), opts), ContractError);
}

TEST(Network, DenseLayerMatchesHandComputation) {
  const NetworkSpec spec = parse_network_spec("input = 3\nclasses = 2\nlayer.0 = dense out=2\n");
  Network net = Network::build(spec, 4);
  net.parameters()[0].value = Tensor({2, 3}, {1, -2, 0.5, 0, 3, 1});
  net.parameters()[1].value = Tensor({2}, {0.25, -1});
  const Tensor y = net.logits(Tensor({1, 3}, {2, 1, 4}));
  EXPECT_DOUBLE_EQ(y[0], 1 * 2 - 2 * 1 + 0.5 * 4 + 0.25);
  EXPECT_DOUBLE_EQ(y[1], 0 * 2 + 3 * 1 + 1 * 4 - 1);
}

TEST(Network, WrongInputShapeRejected) {
  const Network net = Network::build(parse_network_spec(kSmallCnn), 3);
  EXPECT_THROW(net.logits(random_batch(2, {1, 6, 6}, 1)), DimensionError);
}

TEST(Network, InitIsSeeded) {
  const NetworkSpec spec = parse_network_spec(kSmallCnn);
  const Network a = Network::build(spec, 7);
  const Network b = Network::build(spec, 7);
  const Network c = Network::build(spec, 8);
  EXPECT_EQ(a.parameters()[0].value.values(), b.parameters()[0].value.values());
  EXPECT_NE(a.parameters()[0].value.values(), c.parameters()[0].value.values());
}

TEST(Checkpoint, RoundTrip) {
  kaptest::TempDir dir("ckpt");
  const NetworkSpec spec = parse_network_spec(kSmallCnn);
  const Network a = Network::build(spec, 11);
  a.save(dir.file("a.ckpt"));
  Network b = Network::build(spec, 12);
  b.load(dir.file("a.ckpt"));
  for (std::size_t i = 0; i < a.parameters().size(); ++i)
    EXPECT_EQ(a.parameters()[i].value.values(), b.parameters()[i].value.values());
  const Tensor x = random_batch(2, {1, 8, 8}, 3);
  EXPECT_EQ(a.logits(x).values(), b.logits(x).values());
}

TEST(Checkpoint, BadFilesRejected) {
  kaptest::TempDir dir("ckpt_bad");
  const NetworkSpec spec = parse_network_spec(kSmallCnn);
  Network net = Network::build(spec, 1);

  kaptest::write_file(dir.file("empty.ckpt"), "");
  EXPECT_THROW(net.load(dir.file("empty.ckpt")), FormatError);
  kaptest::write_file(dir.file("magic.ckpt"), "NOTACKPTxxxxxxxxxxxx");
  EXPECT_THROW(net.load(dir.file("magic.ckpt")), FormatError);
  EXPECT_THROW(net.load(dir.file("missing.ckpt")), IoError);

  net.save(dir.file("full.ckpt"));
  const std::string bytes = kaptest::slurp(dir.file("full.ckpt"));
  kaptest::write_file(dir.file("cut.ckpt"), bytes.substr(0, bytes.size() / 2));
  EXPECT_THROW(net.load(dir.file("cut.ckpt")), Error);

  const NetworkSpec other = parse_network_spec("input = 1x8x8\nclasses = 3\nlayer.0 = conv2d out=2\n"
                                               "layer.1 = spatial_avg_pool global\nlayer.2 = flatten\n"
                                               "layer.3 = dense out=3\n");
  Network small = Network::build(other, 1);
  EXPECT_THROW(small.load(dir.file("full.ckpt")), FormatError);
}

TEST(Network, ActivationsRecordedPerLayer) {
  const Network net = Network::build(parse_network_spec(kSmallCnn), 3);
  Tape tape;
  const ForwardResult r = net.forward(tape, tape.constant(random_batch(2, {1, 8, 8}, 1)));
  ASSERT_EQ(r.activations.size(), net.spec().layers.size());
  for (std::size_t i = 0; i < r.activations.size(); ++i) {
    Shape want{2};
    want.insert(want.end(), net.layer_shapes()[i].begin(), net.layer_shapes()[i].end());
    EXPECT_EQ(r.activations[i].shape(), want) << "layer " << i;
  }
}
