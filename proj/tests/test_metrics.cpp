#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "pairdiff/error.hpp"
#include "pairdiff/metrics.hpp"

using namespace pairdiff;
using namespace testutil;

namespace {

// Direct 2-D windowed SSIM with in-bounds weights renormalized per pixel.
double ssim_oracle(const Tensor3& a, const Tensor3& b) {
  const int r = 5;
  const double sigma = 1.5, c1 = 1e-4, c2 = 9e-4;
  double total = 0;
  for (int c = 0; c < a.channels; ++c) {
    double acc = 0;
    for (int y = 0; y < a.height; ++y) {
      for (int x = 0; x < a.width; ++x) {
        double ws = 0, mx = 0, my = 0, sxx = 0, syy = 0, sxy = 0;
        for (int dy = -r; dy <= r; ++dy) {
          for (int dx = -r; dx <= r; ++dx) {
            const int yy = y + dy, xx = x + dx;
            if (yy < 0 || yy >= a.height || xx < 0 || xx >= a.width) continue;
            const double wgt = std::exp(-(dy * dy + dx * dx) / (2 * sigma * sigma));
            const double u = a.at(c, yy, xx), v = b.at(c, yy, xx);
            ws += wgt;
            mx += wgt * u;
            my += wgt * v;
            sxx += wgt * u * u;
            syy += wgt * v * v;
            sxy += wgt * u * v;
          }
        }
        mx /= ws;
        my /= ws;
        const double vx = sxx / ws - mx * mx, vy = syy / ws - my * my, cov = sxy / ws - mx * my;
        acc += ((2 * mx * my + c1) * (2 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
      }
    }
    total += acc / (a.height * a.width);
  }
  return total / a.channels;
}

std::vector<std::vector<float>> gaussian_set(Rng& rng, int n, int d, double shift, double scale) {
  std::vector<std::vector<float>> out(static_cast<std::size_t>(n), std::vector<float>(static_cast<std::size_t>(d)));
  for (auto& v : out) {
    for (int k = 0; k < d; ++k) v[static_cast<std::size_t>(k)] = static_cast<float>(rng.normal() * scale + (k == 0 ? shift : 0.0));
  }
  return out;
}

}  // namespace

TEST_CASE("SSIM of an image with itself is one") {
  Rng rng(1);
  for (int i = 0; i < 5; ++i) {
    const Image x = random_image(rng, 20, 17);
    CHECK(std::abs(ssim(x.pixels, x.pixels) - 1.0) <= 1e-6);
  }
  const Image flat(12, 12, 0.4f);
  CHECK(std::abs(ssim(flat.pixels, flat.pixels) - 1.0) <= 1e-6);
}

TEST_CASE("SSIM matches a direct windowed oracle") {
  Rng rng(2);
  for (int i = 0; i < 5; ++i) {
    const Image a = random_image(rng, 14, 13);
    Image b = a;
    for (auto& v : b.pixels.values) v = static_cast<float>(std::clamp(v + 0.2 * rng.normal(), 0.0, 1.0));
    CHECK(ssim(a.pixels, b.pixels) == doctest::Approx(ssim_oracle(a.pixels, b.pixels)).epsilon(1e-9));
  }
  CHECK_THROWS_AS(ssim(Tensor3(3, 4, 4), Tensor3(3, 4, 5)), ShapeMismatch);
}

TEST_CASE("SSIM is symmetric and drops under noise") {
  Rng rng(3);
  const Image a = random_image(rng, 16, 16);
  Image b = a;
  for (auto& v : b.pixels.values) v = static_cast<float>(std::clamp(v + 0.3 * rng.normal(), 0.0, 1.0));
  CHECK(ssim(a.pixels, b.pixels) == doctest::Approx(ssim(b.pixels, a.pixels)));
  CHECK(ssim(a.pixels, b.pixels) < 0.9);
}

TEST_CASE("bilinear resize") {
  Rng rng(4);
  const Tensor3 t = random_tensor(rng, 2, 5, 7);
  CHECK(resize_bilinear(t, 5, 7) == t);
  const auto up = resize_bilinear(Tensor3(1, 3, 3, 0.7f), 9, 4);
  for (float v : up.values) CHECK(v == doctest::Approx(0.7));
  // 2×1 → 4×1 with half-pixel centres: 0, 0.25, 0.75, 1.
  Tensor3 col(1, 2, 1);
  col.at(0, 1, 0) = 1.0f;
  const auto r = resize_bilinear(col, 4, 1);
  CHECK(r.values == std::vector<float>{0.0f, 0.25f, 0.75f, 1.0f});
}

TEST_CASE("ssim_faithfulness upsizes small regions") {
  Rng rng(5);
  const Image a = random_image(rng, 4, 5);
  CHECK(ssim_faithfulness(a, a) == doctest::Approx(1.0));
  const Image big(Tensor3(resize_bilinear(a.pixels, 8, 10)));
  CHECK(ssim_faithfulness(big, a) > 0.5);
}

TEST_CASE("mIoU") {
  Grid<int> gt(2, 4, 0);
  gt(0, 2) = gt(0, 3) = gt(1, 2) = gt(1, 3) = 1;
  CHECK(miou(gt, gt) == 1.0);
  Grid<int> pred = gt;
  pred(0, 0) = 1;
  // class 0: 3/4, class 1: 4/5.
  CHECK(miou(pred, gt) == doctest::Approx((0.75 + 0.8) / 2));
  // Predicting a class absent from gt only grows the union of the gt class.
  pred = gt;
  pred(0, 0) = 7;
  CHECK(miou(pred, gt) == doctest::Approx((0.75 + 1.0) / 2));
  CHECK_THROWS_AS(miou(Grid<int>(2, 3), gt), ShapeMismatch);
}

TEST_CASE("FID of a set with itself is zero") {
  Rng rng(6);
  const auto a = gaussian_set(rng, 400, 4, 0.0, 1.0);
  CHECK(fid_from_embeddings(a, a).value <= 1e-4);
  CHECK(fid_from_embeddings(a, a).value >= -1e-4);
}

TEST_CASE("FID of shifted Gaussians matches the closed form") {
  Rng rng(7);
  const auto a = gaussian_set(rng, 5000, 4, 0.0, 1.0);
  const auto b = gaussian_set(rng, 5000, 4, 3.0, 1.0);
  const double f = fid_from_embeddings(a, b).value;
  CHECK(f == doctest::Approx(9.0).epsilon(0.1));
  // Scale only: tr(I + 4I − 2·2I) = d.
  const auto c = gaussian_set(rng, 5000, 9, 0.0, 2.0);
  const auto d = gaussian_set(rng, 5000, 9, 0.0, 1.0);
  CHECK(fid_from_embeddings(c, d).value == doctest::Approx(9.0).epsilon(0.1));
}

TEST_CASE("FID needs more samples than dimensions") {
  Rng rng(8);
  const auto a = gaussian_set(rng, 4, 4, 0.0, 1.0);
  CHECK_THROWS_AS(fid_from_embeddings(a, a), InvalidArgument);
  CHECK_THROWS_AS(fid_from_embeddings({}, a), InvalidArgument);
}

TEST_CASE("FID falls back to regularization for singular covariances") {
  std::vector<std::vector<float>> a, b;
  Rng rng(9);
  for (int i = 0; i < 50; ++i) {
    const float v = static_cast<float>(rng.normal());
    a.push_back({v, v});
    b.push_back({v + 1.0f, v + 1.0f});
  }
  const auto r = fid_from_embeddings(a, b);
  CHECK(std::isfinite(r.value));
  CHECK(r.value == doctest::Approx(2.0).epsilon(0.05));
}

TEST_CASE("LPIPS-like distance") {
  Rng rng(10);
  const auto backend = make_embedding_backend("desk");
  const Image a = random_image(rng, 16, 16);
  const Image b = random_image(rng, 16, 16);
  CHECK(lpips_like(a, a, *backend) == doctest::Approx(0.0));
  CHECK(lpips_like(a, b, *backend) > 0.0);
  CHECK(lpips_like(a, b, *backend) == doctest::Approx(lpips_like(b, a, *backend)));
  CHECK_THROWS_AS(make_embedding_backend("inception"), InvalidArgument);
}

TEST_CASE("embedding backends") {
  Rng rng(11);
  const Image a = random_image(rng, 16, 16);
  CHECK(make_embedding_backend("identity")->embed(a) == a.pixels.values);
  const auto desk = make_embedding_backend("desk");
  CHECK(desk->embed(a).size() == 16);
  CHECK(desk->feature_maps(a).size() == 3);
}

TEST_CASE("L1 locality counts only pixels outside the region") {
  Image a(4, 4, 0.0f), b(4, 4, 0.0f);
  Mask region(4, 4);
  region(0, 0) = 1;
  for (int c = 0; c < 3; ++c) b.at(c, 0, 0) = 1.0f;
  CHECK(l1_locality(a, b, region) == 0.0);
  b.at(1, 3, 3) = 0.9f;
  CHECK(l1_locality(a, b, region) == doctest::Approx(0.9 / (15 * 3)));
  CHECK(l1_locality(a, b, Mask(4, 4, 0)) == doctest::Approx((3.0 + 0.9) / 48));
}

TEST_CASE("bbox and crop") {
  Mask m(6, 8);
  m(1, 2) = m(4, 5) = 1;
  const Box b = mask_bbox(m);
  CHECK(b.top == 1);
  CHECK(b.left == 2);
  CHECK(b.bottom == 5);
  CHECK(b.right == 6);
  Rng rng(12);
  const Image img = random_image(rng, 6, 8);
  const Image c = crop(img, b);
  CHECK(c.height() == 4);
  CHECK(c.width() == 4);
  CHECK(c.at(2, 3, 3) == img.at(2, 4, 5));
  CHECK_THROWS(mask_bbox(Mask(3, 3, 0)));
}

TEST_CASE("colour segmentation and mean colour") {
  Image img(2, 2, 0.0f);
  for (int c = 0; c < 3; ++c) img.at(c, 0, 1) = img.at(c, 1, 1) = 1.0f;
  const auto seg = color_segment(img, {{0, 0, 0}, {1, 1, 1}}, {0, 2});
  CHECK(seg(0, 0) == 0);
  CHECK(seg(1, 1) == 2);
  Mask m(2, 2, 1);
  const auto mean = mean_color(img, m);
  CHECK(mean[0] == doctest::Approx(0.5));
  CHECK(color_distance({0, 0, 0}, {1, 1, 1}) == doctest::Approx(std::sqrt(3.0)));
}
