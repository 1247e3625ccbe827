#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "dermnet/checkpoint.hpp"
#include "dermnet/network.hpp"
#include "testutil.hpp"

using namespace dermnet;
using dermnet::testutil::random_input;
using dermnet::testutil::toy_config;

TEST(BuildNetwork, HeadOutputsSevenClasses) {
  const auto layers = build_layers(NetworkConfig{});
  EXPECT_EQ(layers.back().kind, LayerKind::Softmax);
  EXPECT_EQ(layers.back().out.c, 7);
}

TEST(BuildNetwork, ResidualBlocksPreserveShape) {
  for (const NetworkConfig& cfg : {NetworkConfig{}, toy_config()}) {
    const auto layers = build_layers(cfg);
    int residuals = 0;
    for (const auto& d : layers) {
      if (d.kind != LayerKind::ResidualAdd) continue;
      ++residuals;
      const Shape3 a = layers[static_cast<std::size_t>(d.inputs[0])].out;
      const Shape3 b = layers[static_cast<std::size_t>(d.inputs[1])].out;
      EXPECT_EQ(a, b);
      EXPECT_EQ(d.out, a);
    }
    EXPECT_EQ(residuals, cfg.block_counts[0] + cfg.block_counts[1] + cfg.block_counts[2]);
  }
}

TEST(BuildNetwork, StageSpatialSizes) {
  // Hand-derived walk for a 299x299 input:
  //   299 -(3x3 s2 V)-> 149 -(3x3 V)-> 147 -(same)-> 147 -(pool3 s2 V)-> 73
  //   -(1x1)-> 73 -(3x3 V)-> 71 -(pool3 s2 V)-> 35  => stem 35x35
  //   35 -(3x3 s2 V)-> 17                           => after first reduction
  //   17 -(3x3 s2 V)-> 8                            => after second reduction
  const auto layers = build_layers(NetworkConfig{});
  for (const auto& d : layers) {
    if (d.name == "stem/mix/concat") {
      EXPECT_EQ(d.out.h, 35);
      EXPECT_EQ(d.out.w, 35);
    } else if (d.name == "reda/concat") {
      EXPECT_EQ(d.out.h, 17);
      EXPECT_EQ(d.out.w, 17);
    } else if (d.name == "redb/concat") {
      EXPECT_EQ(d.out.h, 8);
      EXPECT_EQ(d.out.w, 8);
    }
  }
}

TEST(BuildNetwork, TooSmallInputUnderflows) {
  NetworkConfig cfg = toy_config();
  cfg.input_hw = 20;
  try {
    build_layers(cfg);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind, Err::ShapeUnderflow);
  }
}

TEST(BuildNetwork, GlobalAvgPoolSwitch) {
  NetworkConfig cfg = toy_config();
  cfg.global_avg_pool = true;
  const auto layers = build_layers(cfg);
  bool saw_gap = false;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (layers[i].name == "head/gap") {
      saw_gap = true;
      EXPECT_EQ(layers[i].out.h, 1);
      EXPECT_EQ(layers[i].out.w, 1);
    }
  }
  EXPECT_TRUE(saw_gap);
}

TEST(Forward, SoftmaxRowsSumToOne) {
  auto net = build_network<float>(toy_config());
  init_parameters(net, 5);
  const Tensor input = random_input<float>(3, 75, 9);
  ForwardCtx<float> ctx;
  const Tensor& probs = forward(net, input, /*training=*/false, ctx);
  ASSERT_EQ(probs.shape, (std::vector<int>{3, 7}));
  for (int s = 0; s < 3; ++s) {
    double sum = 0.0;
    for (int j = 0; j < 7; ++j) {
      const float p = probs.data[static_cast<std::size_t>(s) * 7 + j];
      EXPECT_GE(p, 0.0f);
      sum += p;
    }
    EXPECT_NEAR(sum, 1.0, 1e-5);
  }
}

TEST(Forward, IdenticalInputsGiveIdenticalRows) {
  auto net = build_network<float>(toy_config());
  init_parameters(net, 6);
  const Tensor one = random_input<float>(1, 75, 10);
  Tensor two({2, 3, 75, 75});
  std::copy(one.data.begin(), one.data.end(), two.data.begin());
  std::copy(one.data.begin(), one.data.end(), two.data.begin() + one.numel());
  ForwardCtx<float> ctx;
  const Tensor& probs = forward(net, two, /*training=*/false, ctx);
  for (int j = 0; j < 7; ++j)
    EXPECT_EQ(probs.data[static_cast<std::size_t>(j)],
              probs.data[static_cast<std::size_t>(7 + j)]);
}

TEST(Forward, DeterministicAcrossRebuilds) {
  const Tensor input = random_input<float>(2, 75, 11);
  Tensor first, second;
  for (Tensor* out : {&first, &second}) {
    auto net = build_network<float>(toy_config());
    init_parameters(net, 77);
    ForwardCtx<float> ctx;
    *out = forward(net, input, false, ctx);
  }
  EXPECT_EQ(first.data, second.data);
}

TEST(Forward, WrongInputShapeRaises) {
  auto net = build_network<float>(toy_config());
  init_parameters(net, 5);
  ForwardCtx<float> ctx;
  Tensor bad({1, 3, 64, 64});
  try {
    forward(net, bad, false, ctx);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind, Err::ShapeMismatch);
  }
}

namespace {

/// 3x3 input, one biased convolution, flatten, softmax: small enough to
/// evaluate by hand.
NetworkT<double> hand_graph() {
  NetworkT<double> net;
  net.cfg.input_hw = 3;
  net.cfg.num_classes = 2;

  LayerDef input;
  input.name = "input";
  input.kind = LayerKind::Input;
  input.out = {3, 3, 3};
  net.layers.push_back(input);

  LayerDef conv;
  conv.name = "c";
  conv.kind = LayerKind::Conv;
  conv.inputs = {0};
  conv.filters = 2;
  conv.kernel_h = conv.kernel_w = 3;
  conv.stride = 1;
  conv.padding = Padding::Valid;
  conv.use_bias = true;
  conv.out = {2, 1, 1};
  net.layers.push_back(conv);

  LayerDef flat;
  flat.name = "flat";
  flat.kind = LayerKind::Flatten;
  flat.inputs = {1};
  flat.out = {2, 1, 1};
  net.layers.push_back(flat);

  LayerDef sm;
  sm.name = "softmax";
  sm.kind = LayerKind::Softmax;
  sm.inputs = {2};
  sm.out = {2, 1, 1};
  net.layers.push_back(sm);

  net.params.emplace("c/weight", TensorT<double>({2, 3, 3, 3}));
  net.params.emplace("c/bias", TensorT<double>({2}));
  return net;
}

}  // namespace

TEST(Forward, HandComputedToyProbabilities) {
  auto net = hand_graph();
  // filter 0: picks input(ch0, y=1, x=1) and adds 0.2
  // filter 1: -input(ch2, y=0, x=0)
  auto& w = net.param("c/weight");
  w.data[(0 * 3 + 0) * 9 + 1 * 3 + 1] = 1.0;   // oc0, ic0, k(1,1)
  w.data[(1 * 3 + 2) * 9 + 0 * 3 + 0] = -1.0;  // oc1, ic2, k(0,0)
  net.param("c/bias").data = {0.2, 0.0};

  TensorT<double> input({1, 3, 3, 3});
  for (std::size_t i = 0; i < input.data.size(); ++i)
    input.data[i] = static_cast<double>(i) * 0.01;

  // input(0,1,1) = element 4 -> 0.04; input(2,0,0) = element 18 -> 0.18
  const double z0 = 0.04 + 0.2;
  const double z1 = -0.18;
  const double e0 = std::exp(z0), e1 = std::exp(z1);

  ForwardCtx<double> ctx;
  const TensorT<double>& probs = forward(net, input, false, ctx);
  EXPECT_NEAR(probs.data[0], e0 / (e0 + e1), 1e-12);
  EXPECT_NEAR(probs.data[1], e1 / (e0 + e1), 1e-12);
}

TEST(Backward, SaturatedCorrectPredictionHasTinyGradient) {
  auto net = hand_graph();
  auto& w = net.param("c/weight");
  // large logit gap saturates the softmax at class 0
  w.data[(0 * 3 + 0) * 9 + 1 * 3 + 1] = 60.0;
  net.param("c/bias").data = {5.0, -5.0};

  TensorT<double> input({1, 3, 3, 3});
  input.fill(1.0);

  ForwardCtx<double> ctx;
  const TensorT<double>& probs = forward(net, input, true, ctx);
  ASSERT_GT(probs.data[0], 1.0 - 1e-9);

  const TensorT<double> dprobs = weighted_cce_grad(probs, {0}, {1.0, 1.0});
  const auto grads = backward(net, ctx, dprobs);
  double norm = 0.0;
  for (const auto& [name, g] : grads)
    for (const double v : g.data) norm += v * v;
  EXPECT_LE(std::sqrt(norm), 1e-3);
}

// Focused finite-difference checks per building block, double precision.
namespace {

NetworkT<double> op_net(std::vector<LayerDef> layers, int input_hw, int classes) {
  NetworkT<double> net;
  net.cfg.input_hw = input_hw;
  net.cfg.num_classes = classes;
  net.cfg.bn_momentum = 0.9;
  net.layers = std::move(layers);
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    const LayerDef& d = net.layers[i];
    if (d.kind == LayerKind::Conv) {
      const Shape3 is = net.layers[static_cast<std::size_t>(d.inputs[0])].out;
      net.params.emplace(d.name + "/weight",
                         TensorT<double>({d.filters, is.c, d.kernel_h, d.kernel_w}));
      if (d.use_bias) net.params.emplace(d.name + "/bias", TensorT<double>({d.filters}));
    } else if (d.kind == LayerKind::BatchNorm) {
      net.params.emplace(d.name + "/gamma", TensorT<double>({d.out.c}));
      net.params.emplace(d.name + "/beta", TensorT<double>({d.out.c}));
      net.params.emplace(d.name + "/running_mean", TensorT<double>({d.out.c}));
      net.params.emplace(d.name + "/running_var", TensorT<double>({d.out.c}));
    } else if (d.kind == LayerKind::FullyConnected) {
      const Shape3 is = net.layers[static_cast<std::size_t>(d.inputs[0])].out;
      net.params.emplace(d.name + "/weight", TensorT<double>({d.units, is.c}));
      net.params.emplace(d.name + "/bias", TensorT<double>({d.units}));
    }
  }
  init_parameters(net, 21);
  return net;
}

LayerDef make(const std::string& name, LayerKind kind, std::vector<int> inputs,
              Shape3 out) {
  LayerDef d;
  d.name = name;
  d.kind = kind;
  d.inputs = std::move(inputs);
  d.out = out;
  return d;
}

}  // namespace

TEST(Backward, MixedGraphFiniteDifference) {
  // conv(same,s1)+bn+relu -> {maxpool branch, avgpool branch} -> concat ->
  // conv 1x1 -> residual-add -> flatten -> fc -> softmax. Exercises every
  // backward kernel including multi-consumer accumulation.
  std::vector<LayerDef> L;
  L.push_back(make("input", LayerKind::Input, {}, {3, 6, 6}));

  LayerDef c1 = make("c1", LayerKind::Conv, {0}, {4, 6, 6});
  c1.filters = 4;
  c1.kernel_h = c1.kernel_w = 3;
  c1.stride = 1;
  c1.padding = Padding::Same;
  L.push_back(c1);
  LayerDef b1 = make("c1/bn", LayerKind::BatchNorm, {1}, {4, 6, 6});
  b1.bn_owner = 1;
  L.push_back(b1);
  L.push_back(make("c1/relu", LayerKind::Relu, {2}, {4, 6, 6}));

  LayerDef mp = make("mp", LayerKind::MaxPool, {3}, {4, 3, 3});
  mp.kernel_h = mp.kernel_w = 2;
  mp.stride = 2;
  mp.padding = Padding::Valid;
  L.push_back(mp);
  LayerDef ap = make("ap", LayerKind::AvgPool, {3}, {4, 3, 3});
  ap.kernel_h = ap.kernel_w = 2;
  ap.stride = 2;
  ap.padding = Padding::Valid;
  L.push_back(ap);

  L.push_back(make("cat", LayerKind::Concat, {4, 5}, {8, 3, 3}));

  LayerDef c2 = make("c2", LayerKind::Conv, {6}, {8, 3, 3});
  c2.filters = 8;
  c2.kernel_h = c2.kernel_w = 1;
  c2.stride = 1;
  c2.padding = Padding::Same;
  c2.use_bias = true;
  L.push_back(c2);

  LayerDef add = make("add", LayerKind::ResidualAdd, {6, 7}, {8, 3, 3});
  add.res_scale = 0.37;
  L.push_back(add);

  L.push_back(make("flat", LayerKind::Flatten, {8}, {72, 1, 1}));
  LayerDef fc = make("fc", LayerKind::FullyConnected, {9}, {3, 1, 1});
  fc.units = 3;
  L.push_back(fc);
  L.push_back(make("sm", LayerKind::Softmax, {10}, {3, 1, 1}));

  auto net = op_net(std::move(L), 6, 3);
  const TensorT<double> input = random_input<double>(2, 6, 13);
  const std::vector<int> targets = {0, 2};
  const std::vector<double> weights = {1.0, 2.0, 0.5};

  const auto report =
      testutil::fd_check(net, input, targets, weights, 120, 1234);
  EXPECT_EQ(report.checked, 120);
  EXPECT_LE(report.max_rel_err, 1e-5) << "worst: " << report.worst_coord;
}

TEST(Freeze, HeadOnly) {
  auto net = build_network<float>(toy_config());
  freeze_for_fine_tuning(net, 3);
  EXPECT_EQ(trainable_layer_names(net),
            (std::vector<std::string>{"head/fc1", "head/fc2", "head/logits"}));
}

TEST(Freeze, AllLayers) {
  auto net = build_network<float>(toy_config());
  const int total = count_parameterized_layers(net);
  freeze_for_fine_tuning(net, total);
  EXPECT_EQ(static_cast<int>(trainable_layer_names(net).size()), total);
}

TEST(Freeze, LastFortyMatchesReverseEnumeration) {
  auto net = build_network<float>(NetworkConfig{});
  freeze_for_fine_tuning(net, 40);

  // independent oracle: collect parameterized names in forward order and
  // keep the last 40
  std::vector<std::string> all;
  for (const auto& d : net.layers)
    if (d.parameterized()) all.push_back(d.name);
  const std::vector<std::string> expected(all.end() - 40, all.end());
  EXPECT_EQ(trainable_layer_names(net), expected);
}

TEST(Freeze, CountProperty) {
  auto net = build_network<float>(toy_config());
  const int total = count_parameterized_layers(net);
  for (const int n : {1, 2, 7, total}) {
    freeze_for_fine_tuning(net, n);
    EXPECT_EQ(static_cast<int>(trainable_layer_names(net).size()), n);
  }
}

TEST(Freeze, OutOfRangeRaises) {
  auto net = build_network<float>(toy_config());
  const int total = count_parameterized_layers(net);
  EXPECT_THROW(freeze_for_fine_tuning(net, 0), Error);
  EXPECT_THROW(freeze_for_fine_tuning(net, total + 1), Error);
}

TEST(Freeze, FrozenLayersGetNoGradients) {
  auto net = build_network<double>(toy_config());
  init_parameters(net, 3);
  freeze_for_fine_tuning(net, 3);

  ForwardCtx<double> ctx;
  const TensorT<double> input = random_input<double>(2, 75, 8);
  const TensorT<double>& probs = forward(net, input, true, ctx);
  const TensorT<double> dprobs =
      weighted_cce_grad(probs, {1, 4}, std::vector<double>(7, 1.0));
  const auto grads = backward(net, ctx, dprobs);
  for (const auto& [name, g] : grads) {
    EXPECT_TRUE(name.starts_with("head/")) << name;
  }
  EXPECT_EQ(grads.size(), 6u);  // 3 FC layers x (weight, bias)
}

TEST(Init, DeterministicPerSeed) {
  auto a = build_network<float>(toy_config());
  auto b = build_network<float>(toy_config());
  init_parameters(a, 42);
  init_parameters(b, 42);
  for (const auto& [name, t] : a.params) EXPECT_EQ(t.data, b.params.at(name).data);
  init_parameters(b, 43);
  EXPECT_NE(a.param("head/fc1/weight").data, b.param("head/fc1/weight").data);
}

TEST(Init, BiasesZeroGammaOne) {
  auto net = build_network<float>(toy_config());
  init_parameters(net, 1);
  for (const auto& [name, t] : net.params) {
    if (name.ends_with("/bias") || name.ends_with("/beta") ||
        name.ends_with("/running_mean"))
      for (const float v : t.data) EXPECT_EQ(v, 0.0f);
    if (name.ends_with("/gamma") || name.ends_with("/running_var"))
      for (const float v : t.data) EXPECT_EQ(v, 1.0f);
  }
}

TEST(Init, WeightStatisticsWithinFanInLimit) {
  auto net = build_network<float>(toy_config());
  init_parameters(net, 2);
  const Tensor& w = net.param("head/fc1/weight");  // 64 x 520: plenty of samples
  ASSERT_GE(w.numel(), 1000);
  const double limit = std::sqrt(6.0 / w.dim(1));
  double sum = 0.0;
  for (const float v : w.data) {
    EXPECT_LE(std::abs(v), limit);
    sum += v;
  }
  const double mean = sum / static_cast<double>(w.numel());
  EXPECT_LE(std::abs(mean), limit / 20.0);
}

// --- checkpointing -----------------------------------------------------------

namespace {
std::filesystem::path ckpt_dir() {
  const auto dir = std::filesystem::temp_directory_path() / "dermnet_ckpt_test";
  std::filesystem::create_directories(dir);
  return dir;
}
}  // namespace

TEST(Checkpoint, RoundTripIsBitExact) {
  auto net = build_network<float>(toy_config());
  init_parameters(net, 4);
  CheckpointMeta meta;
  meta.epoch = 12;
  meta.best_metric = 0.734;
  meta.best_epoch = 9;
  const std::string path = (ckpt_dir() / "rt.ckpt").string();
  save_checkpoint(net, meta, path);

  const LoadedCheckpoint loaded = load_checkpoint(path);
  EXPECT_EQ(loaded.meta.epoch, 12);
  EXPECT_DOUBLE_EQ(loaded.meta.best_metric, 0.734);
  EXPECT_EQ(loaded.meta.best_epoch, 9);
  EXPECT_EQ(loaded.labels.at("akiec"), 0);
  EXPECT_EQ(loaded.labels.at("vasc"), 6);

  ASSERT_EQ(loaded.net.params.size(), net.params.size());
  for (const auto& [name, t] : net.params) {
    const Tensor& u = loaded.net.params.at(name);
    ASSERT_EQ(t.shape, u.shape) << name;
    ASSERT_EQ(t.data.size(), u.data.size());
    EXPECT_EQ(std::memcmp(t.data.data(), u.data.data(), t.data.size() * 4), 0)
        << name;
  }
}

TEST(Checkpoint, ForwardIdenticalAfterReload) {
  auto net = build_network<float>(toy_config());
  init_parameters(net, 15);
  const Tensor input = random_input<float>(2, 75, 3);
  ForwardCtx<float> ctx;
  const Tensor before = forward(net, input, false, ctx);

  const std::string path = (ckpt_dir() / "fw.ckpt").string();
  save_checkpoint(net, CheckpointMeta{}, path);
  LoadedCheckpoint loaded = load_checkpoint(path);
  const Tensor after = forward(loaded.net, input, false, ctx);
  EXPECT_EQ(before.data, after.data);
}

TEST(Checkpoint, MismatchedHeadIsShapeMismatch) {
  auto net = build_network<float>(toy_config());
  init_parameters(net, 5);
  const std::string path = (ckpt_dir() / "mm.ckpt").string();
  save_checkpoint(net, CheckpointMeta{}, path);

  NetworkConfig other = toy_config();
  other.num_classes = 4;
  auto target = build_network<float>(other);
  try {
    load_into(target, path);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind, Err::ShapeMismatch);
    EXPECT_NE(std::string(e.what()).find("head/logits"), std::string::npos);
  }
}

TEST(Checkpoint, PartialLoadReportsFreshHead) {
  auto net = build_network<float>(toy_config());
  init_parameters(net, 5);
  const std::string path = (ckpt_dir() / "partial.ckpt").string();
  save_checkpoint(net, CheckpointMeta{}, path);

  NetworkConfig other = toy_config();
  other.num_classes = 4;  // backbone identical, head differs
  auto target = build_network<float>(other);
  init_parameters(target, 99);
  const PartialLoadReport report = load_into(target, path, /*allow_partial=*/true);

  EXPECT_FALSE(report.loaded.empty());
  ASSERT_EQ(report.fresh.size(), 2u);  // logits weight + bias
  for (const auto& name : report.fresh)
    EXPECT_TRUE(name.starts_with("head/logits")) << name;
  // backbone tensors now match the file
  EXPECT_EQ(target.param("stem/conv1/weight").data,
            net.param("stem/conv1/weight").data);
}

TEST(Checkpoint, VelocityRoundTrip) {
  auto net = build_network<float>(toy_config());
  init_parameters(net, 6);
  std::map<std::string, Tensor> vel;
  vel.emplace("head/fc1/weight", net.param("head/fc1/weight"));
  const std::string path = (ckpt_dir() / "vel.ckpt").string();
  save_checkpoint(net, CheckpointMeta{}, path, &vel);
  const LoadedCheckpoint loaded = load_checkpoint(path);
  ASSERT_EQ(loaded.velocity.size(), 1u);
  EXPECT_EQ(loaded.velocity.at("head/fc1/weight").data,
            net.param("head/fc1/weight").data);
}

TEST(Checkpoint, CorruptAndWrongVersion) {
  const std::string garbage = (ckpt_dir() / "garbage.ckpt").string();
  {
    std::ofstream out(garbage, std::ios::binary);
    out << "definitely not a checkpoint";
  }
  try {
    load_checkpoint(garbage);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind, Err::CorruptFile);
  }

  // valid file, doctored version field
  auto net = build_network<float>(toy_config());
  init_parameters(net, 8);
  const std::string path = (ckpt_dir() / "version.ckpt").string();
  save_checkpoint(net, CheckpointMeta{}, path);
  std::ifstream in(path, std::ios::binary);
  std::string blob((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  in.close();
  const auto pos = blob.find("\"version\":1");
  ASSERT_NE(pos, std::string::npos);
  blob.replace(pos, 11, "\"version\":9");
  {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
  }
  try {
    load_checkpoint(path);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind, Err::VersionMismatch);
  }
}

TEST(Checkpoint, MissingFileRaises) {
  try {
    load_checkpoint("/nonexistent/nope.ckpt");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind, Err::MissingFile);
  }
}

TEST(GraphListing, ContainsLayersAndTotals) {
  auto net = build_network<float>(toy_config());
  freeze_for_fine_tuning(net, 3);
  const std::string listing = graph_listing(net.layers);
  EXPECT_NE(listing.find("stem/conv1"), std::string::npos);
  EXPECT_NE(listing.find("head/logits"), std::string::npos);
  EXPECT_NE(listing.find("total params:"), std::string::npos);
  EXPECT_NE(listing.find("convolution"), std::string::npos);
}
