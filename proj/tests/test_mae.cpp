#include <doctest.h>

#include <cmath>
#include <stdexcept>

#include "hamm/errors.hpp"
#include "hamm/mae.hpp"
#include "support.hpp"

using namespace hamm;
using hamm::testing::random_tensor;

namespace {

EncoderConfig small(int size) {
  EncoderConfig c = EncoderConfig::toy();
  c.widths = {4, 6, 8, 8};
  c.stem_width = 4;
  c.mcga.heads = 2;
  c.image_size = size;
  return c;
}

int zero_patches(const Tensor& mask, int size, int patch) {
  int count = 0;
  for (int py = 0; py < size / patch; ++py)
    for (int px = 0; px < size / patch; ++px) {
      int zeros = 0;
      for (int y = py * patch; y < (py + 1) * patch; ++y)
        for (int x = px * patch; x < (px + 1) * patch; ++x) zeros += mask[y * size + x] == 0.0;
      CHECK((zeros == 0 || zeros == patch * patch));
      count += zeros == patch * patch;
    }
  return count;
}

Tensor batch_masks(int n, int size, int patch, double ratio, Rng& rng) {
  Tensor m({n, 1, size, size});
  for (int i = 0; i < n; ++i) {
    const Tensor one = make_mask(size, patch, ratio, rng);
    for (std::size_t k = 0; k < one.size(); ++k) m[i * one.size() + k] = one[k];
  }
  return m;
}

}  // namespace

TEST_CASE("mask: patch counts follow the rounded ratio") {
  Rng rng(1);
  for (int t = 1; t <= 9; ++t) {
    const double ratio = t / 10.0;
    const int expect = static_cast<int>(std::floor(ratio * 49 + 0.5));
    CHECK(masked_patch_count(224, 32, ratio) == expect);
    CHECK(zero_patches(make_mask(224, 32, ratio, rng), 224, 32) == expect);
  }
  CHECK(masked_patch_count(224, 32, 0.7) == 34);
  CHECK(masked_patch_count(224, 32, 0.5) == 25);
}

TEST_CASE("mask: extreme ratios and invalid sizes") {
  Rng rng(2);
  const Tensor none = make_mask(64, 16, 0.0, rng), all = make_mask(64, 16, 1.0, rng);
  for (double v : none.values()) CHECK(v == 1.0);
  for (double v : all.values()) CHECK(v == 0.0);
  CHECK_THROWS_AS(make_mask(100, 32, 0.5, rng), std::invalid_argument);
  CHECK_THROWS_AS(make_mask(64, 16, 1.5, rng), std::invalid_argument);
}

TEST_CASE("mask: different draws pick different patches") {
  Rng rng(3);
  const Tensor a = make_mask(64, 8, 0.5, rng), b = make_mask(64, 8, 0.5, rng);
  bool differ = false;
  for (std::size_t i = 0; i < a.size(); ++i) differ |= a[i] != b[i];
  CHECK(differ);
}

TEST_CASE("apply_mask: ones, zeros and a checkerboard") {
  Rng rng(4);
  const Tensor img = random_tensor({1, 3, 4, 4}, rng);
  const Tensor ones({1, 1, 4, 4}, 1.0), zeros({1, 1, 4, 4});
  Tensor checker({1, 1, 4, 4});
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 4; ++x) checker.at(0, 0, y, x) = (x + y) % 2;
  const Tensor a = apply_mask(img, ones), b = apply_mask(img, zeros), c = apply_mask(img, checker);
  for (std::size_t i = 0; i < img.size(); ++i) {
    CHECK(a[i] == img[i]);
    CHECK(b[i] == 0.0);
  }
  for (int ch = 0; ch < 3; ++ch)
    for (int y = 0; y < 4; ++y)
      for (int x = 0; x < 4; ++x) CHECK(c.at(0, ch, y, x) == ((x + y) % 2 ? img.at(0, ch, y, x) : 0.0));
  CHECK_THROWS_AS(apply_mask(img, Tensor({1, 1, 2, 2})), std::invalid_argument);
}

TEST_CASE("masked_mse: hand arithmetic, identity and locality") {
  Tensor target({1, 1, 2, 2}), pred({1, 1, 2, 2});
  Tensor mask({1, 1, 2, 2}, std::vector<double>{0, 0, 1, 1});
  pred[0] = 1.0;
  pred[1] = 3.0;
  pred[2] = 100.0;
  CHECK(masked_squared_error(target, pred, mask, 0) == 10.0);
  const Tensor t[1] = {target}, p[1] = {pred}, m[1] = {mask};
  const MaskedLoss l = masked_mse(t, p, m);
  CHECK(l.value == doctest::Approx(5.0));
  CHECK(l.grads[0][2] == 0.0);
  CHECK(l.grads[0][3] == 0.0);
  CHECK(l.grads[0][0] == doctest::Approx(1.0));

  Rng rng(5);
  const Tensor s = random_tensor({2, 3, 16, 16}, rng);
  const Tensor mk = batch_masks(2, 16, 4, 0.5, rng);
  const Tensor ss[1] = {s}, ms[1] = {mk};
  CHECK(masked_mse(ss, ss, ms).value == 0.0);
  Tensor noisy = random_tensor(s.shape(), rng);
  const Tensor ns[1] = {noisy};
  const MaskedLoss base = masked_mse(ss, ns, ms);
  Tensor perturbed = noisy;
  for (int n = 0; n < 2; ++n)
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < 16; ++y)
        for (int x = 0; x < 16; ++x)
          if (mk.at(n, 0, y, x) != 0.0) {
            perturbed.at(n, c, y, x) += 5.0;
            CHECK(base.grads[0].at(n, c, y, x) == 0.0);
          }
  const Tensor ps[1] = {perturbed};
  CHECK(masked_mse(ss, ps, ms).value == base.value);
}

TEST_CASE("masked_mse: images without masked pixels are rejected") {
  const Tensor t[1] = {Tensor({1, 3, 4, 4})}, m[1] = {Tensor({1, 1, 4, 4}, 1.0)};
  CHECK_THROWS_AS(masked_mse(t, t, m), std::invalid_argument);
}

TEST_CASE("decoder and head: shapes for 224 input") {
  Rng rng(6);
  EncoderConfig cfg = EncoderConfig::toy();
  MaskedAutoencoder mae(cfg, 16, rng);
  ModalityInputs in;
  for (auto& t : in) t = random_tensor({1, 3, 224, 224}, rng);
  const auto rec = mae.forward(in);
  for (int m = 0; m < 3; ++m) {
    CHECK(mae.last_decoded(m).shape() == Shape{1, 16, 112, 112});
    CHECK(rec[m].shape() == Shape{1, 3, 224, 224});
  }
}

TEST_CASE("decoder: silenced skips still give finite output") {
  Rng rng(7);
  Decoder dec({4, 6, 8, 8}, 8, rng);
  for (auto& p : dec.projections()) {
    p.weight.value.fill(0.0);
    p.bias.value.fill(0.0);
  }
  std::vector<Tensor> skips;
  const int sizes[4] = {8, 4, 2, 1}, widths[4] = {4, 6, 8, 8};
  for (int s = 0; s < 4; ++s) skips.push_back(random_tensor({1, widths[s], sizes[s], sizes[s]}, rng));
  const Tensor d1 = dec.decode(skips);
  CHECK(d1.shape() == Shape{1, 8, 16, 16});
  CHECK(d1.all_finite());
  skips[2] = random_tensor({1, 8, 3, 3}, rng);
  CHECK_THROWS_AS(dec.decode(skips), std::invalid_argument);
}

TEST_CASE("head: zero weights give the bias everywhere") {
  Rng rng(8);
  ReconstructionHead head(8, rng);
  head.conv().weight.value.fill(0.0);
  head.conv().bias.value = Tensor({3}, std::vector<double>{0.1, -0.2, 0.3});
  const Tensor out = head.forward(random_tensor({1, 8, 4, 4}, rng));
  CHECK(out.shape() == Shape{1, 3, 8, 8});
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < 8; ++y)
      for (int x = 0; x < 8; ++x) CHECK(out.at(0, c, y, x) == head.conv().bias.value[c]);
}

TEST_CASE("autoencoder: finite reconstructions over random trials") {
  Rng rng(9);
  MaskedAutoencoder mae(small(32), 8, rng);
  for (int trial = 0; trial < 100; ++trial) {
    ModalityInputs in;
    const double scale = rng.uniform(0.1, 10.0);
    for (auto& t : in) t = random_tensor({1, 3, 32, 32}, rng, -scale, scale);
    const auto rec = mae.forward(in);
    for (const auto& r : rec) REQUIRE(r.all_finite());
  }
}

TEST_CASE("autoencoder: reconstruction loss reaches the first encoder stage") {
  Rng rng(10);
  MaskedAutoencoder mae(small(32), 8, rng);
  ModalityInputs in, masked;
  std::vector<Tensor> masks, targets;
  for (int m = 0; m < 3; ++m) {
    in[m] = random_tensor({2, 3, 32, 32}, rng);
    masks.push_back(batch_masks(2, 32, 8, 0.5, rng));
    masked[m] = apply_mask(in[m], masks[m]);
    targets.push_back(in[m]);
  }
  const auto rec = mae.forward(masked);
  const MaskedLoss loss = masked_mse(targets, rec, masks);
  ParamList params = mae.parameters();
  zero_grads(params);
  mae.backward(loss.grads);
  int stage1 = 0;
  for (const auto& np : params) {
    if (np.name.find("stage1") == std::string::npos) continue;
    ++stage1;
    double norm = 0;
    for (double g : np.param->grad.values()) norm += g * g;
    INFO(np.name);
    CHECK(norm > 0.0);
  }
  CHECK(stage1 > 0);
}

TEST_CASE("autoencoder: full pipeline gradients match central differences") {
  Rng rng(11);
  MaskedAutoencoder mae(small(32), 8, rng);
  hamm::testing::jitter_biases(mae.parameters(), rng);
  ModalityInputs masked;
  std::vector<Tensor> masks, targets;
  for (int m = 0; m < 3; ++m) {
    const Tensor x = random_tensor({2, 3, 32, 32}, rng);
    masks.push_back(batch_masks(2, 32, 8, 0.5, rng));
    masked[m] = apply_mask(x, masks[m]);
    targets.push_back(x);
  }
  auto loss = [&] {
    const auto rec = mae.forward(masked);
    return masked_mse(targets, rec, masks).value;
  };
  const auto rec = mae.forward(masked);
  const MaskedLoss l = masked_mse(targets, rec, masks);
  ParamList params = mae.parameters();
  zero_grads(params);
  mae.backward(l.grads);
  std::vector<Tensor> analytic;
  for (auto& np : params) analytic.push_back(np.param->grad);
  hamm::testing::GradCheck r;
  for (std::size_t i = 0; i < params.size(); ++i)
    hamm::testing::check_tensor(r, params[i].name, params[i].param->value, analytic[i], loss, 1e-6, 6);
  INFO(r.worst);
  CHECK(r.checked > 300);
  CHECK(r.max_error <= 1e-3);
}
