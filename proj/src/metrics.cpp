#include "pairdiff/metrics.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "pairdiff/error.hpp"

namespace pairdiff {

double l1_locality(const Image& original, const Image& edited, const Mask& region) {
  if (!original.pixels.same_shape(edited.pixels)) throw ShapeMismatch("l1_locality: images differ in shape");
  if (region.height() != original.height() || region.width() != original.width()) {
    throw ShapeMismatch("l1_locality: region does not match image");
  }
  double acc = 0.0;
  std::size_t count = 0;
  for (int c = 0; c < 3; ++c) {
    const auto a = original.pixels.plane(c);
    const auto b = edited.pixels.plane(c);
    for (std::size_t i = 0; i < a.size(); ++i) {
      if (region[i]) continue;
      acc += std::abs(static_cast<double>(a[i]) - b[i]);
      ++count;
    }
  }
  if (count == 0) throw InvalidArgument("l1_locality: region covers the whole image");
  return acc / static_cast<double>(count);
}

namespace {

std::vector<double> gaussian_kernel(int size, double sigma) {
  std::vector<double> k(static_cast<std::size_t>(size));
  const double mid = (size - 1) / 2.0;
  double sum = 0.0;
  for (int i = 0; i < size; ++i) {
    k[static_cast<std::size_t>(i)] = std::exp(-(i - mid) * (i - mid) / (2.0 * sigma * sigma));
    sum += k[static_cast<std::size_t>(i)];
  }
  for (double& v : k) v /= sum;
  return k;
}

// Separable Gaussian filter; taps falling outside the image are dropped and
// the remaining weights renormalized.
std::vector<double> blur(const std::vector<double>& img, int h, int w, const std::vector<double>& k) {
  const int r = static_cast<int>(k.size()) / 2;
  std::vector<double> tmp(img.size());
  std::vector<double> out(img.size());
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      double norm = 0.0;
      for (int d = -r; d <= r; ++d) {
        const int sx = x + d;
        if (sx < 0 || sx >= w) continue;
        acc += k[static_cast<std::size_t>(d + r)] * img[static_cast<std::size_t>(y) * w + sx];
        norm += k[static_cast<std::size_t>(d + r)];
      }
      tmp[static_cast<std::size_t>(y) * w + x] = acc / norm;
    }
  }
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      double norm = 0.0;
      for (int d = -r; d <= r; ++d) {
        const int sy = y + d;
        if (sy < 0 || sy >= h) continue;
        acc += k[static_cast<std::size_t>(d + r)] * tmp[static_cast<std::size_t>(sy) * w + x];
        norm += k[static_cast<std::size_t>(d + r)];
      }
      out[static_cast<std::size_t>(y) * w + x] = acc / norm;
    }
  }
  return out;
}

}  // namespace

double ssim(const Tensor3& a, const Tensor3& b, const SsimParams& p) {
  if (!a.same_shape(b)) throw ShapeMismatch("ssim: inputs differ in shape");
  if (a.height < 1 || a.width < 1 || a.channels < 1) throw InvalidArgument("ssim: degenerate input");
  const auto k = gaussian_kernel(p.window, p.sigma);
  const double c1 = std::pow(p.k1 * p.dynamic_range, 2);
  const double c2 = std::pow(p.k2 * p.dynamic_range, 2);
  const int h = a.height;
  const int w = a.width;
  const auto n = a.plane_size();
  double total = 0.0;
  for (int c = 0; c < a.channels; ++c) {
    std::vector<double> x(n), y(n), xx(n), yy(n), xy(n);
    const auto pa = a.plane(c);
    const auto pb = b.plane(c);
    for (std::size_t i = 0; i < n; ++i) {
      x[i] = pa[i];
      y[i] = pb[i];
      xx[i] = x[i] * x[i];
      yy[i] = y[i] * y[i];
      xy[i] = x[i] * y[i];
    }
    const auto mx = blur(x, h, w, k);
    const auto my = blur(y, h, w, k);
    const auto sxx = blur(xx, h, w, k);
    const auto syy = blur(yy, h, w, k);
    const auto sxy = blur(xy, h, w, k);
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double vx = sxx[i] - mx[i] * mx[i];
      const double vy = syy[i] - my[i] * my[i];
      const double cov = sxy[i] - mx[i] * my[i];
      acc += ((2.0 * mx[i] * my[i] + c1) * (2.0 * cov + c2)) /
             ((mx[i] * mx[i] + my[i] * my[i] + c1) * (vx + vy + c2));
    }
    total += acc / static_cast<double>(n);
  }
  return total / a.channels;
}

Tensor3 resize_bilinear(const Tensor3& src, int height, int width) {
  if (height < 1 || width < 1 || src.height < 1 || src.width < 1) throw InvalidArgument("resize: degenerate size");
  if (height == src.height && width == src.width) return src;
  Tensor3 out(src.channels, height, width);
  const double sy = static_cast<double>(src.height) / height;
  const double sx = static_cast<double>(src.width) / width;
  for (int y = 0; y < height; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, src.height - 1.0);
    const int y0 = static_cast<int>(std::floor(fy));
    const int y1 = std::min(y0 + 1, src.height - 1);
    const double wy = fy - y0;
    for (int x = 0; x < width; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, src.width - 1.0);
      const int x0 = static_cast<int>(std::floor(fx));
      const int x1 = std::min(x0 + 1, src.width - 1);
      const double wx = fx - x0;
      for (int c = 0; c < src.channels; ++c) {
        const double v = (1 - wy) * ((1 - wx) * src.at(c, y0, x0) + wx * src.at(c, y0, x1)) +
                         wy * ((1 - wx) * src.at(c, y1, x0) + wx * src.at(c, y1, x1));
        out.at(c, y, x) = static_cast<float>(v);
      }
    }
  }
  return out;
}

double ssim_faithfulness(const Image& driver_region, const Image& edited_region, const SsimParams& params) {
  const int h = edited_region.pixels.height;
  const int w = edited_region.pixels.width;
  if (h < 1 || w < 1 || driver_region.pixels.height < 1 || driver_region.pixels.width < 1) {
    throw InvalidArgument("ssim_faithfulness: degenerate region");
  }
  Tensor3 driver = resize_bilinear(driver_region.pixels, h, w);
  Tensor3 edited = edited_region.pixels;
  const int th = std::max(h, kMinImageSide);
  const int tw = std::max(w, kMinImageSide);
  if (th != h || tw != w) {
    driver = resize_bilinear(driver, th, tw);
    edited = resize_bilinear(edited, th, tw);
  }
  return ssim(driver, edited, params);
}

Box mask_bbox(const Mask& mask) {
  Box b{mask.height(), mask.width(), 0, 0};
  bool any = false;
  for (int y = 0; y < mask.height(); ++y) {
    for (int x = 0; x < mask.width(); ++x) {
      if (!mask(y, x)) continue;
      any = true;
      b.top = std::min(b.top, y);
      b.left = std::min(b.left, x);
      b.bottom = std::max(b.bottom, y + 1);
      b.right = std::max(b.right, x + 1);
    }
  }
  if (!any) throw EmptyMask("bounding box of an empty mask");
  return b;
}

Image crop(const Image& image, const Box& box) {
  Image out;
  out.pixels = Tensor3(3, box.height(), box.width());
  for (int c = 0; c < 3; ++c) {
    for (int y = 0; y < box.height(); ++y) {
      for (int x = 0; x < box.width(); ++x) out.pixels.at(c, y, x) = image.at(c, box.top + y, box.left + x);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

std::vector<float> IdentityEmbedding::embed(const Image& image) const { return image.pixels.values; }

std::vector<Tensor3> IdentityEmbedding::feature_maps(const Image& image) const { return {image.pixels}; }

std::vector<float> DeskEmbedding::embed(const Image& image) const {
  const FeatureMap f = encoder_.extract(image, 3);
  std::vector<float> out(static_cast<std::size_t>(f.values.channels));
  for (int c = 0; c < f.values.channels; ++c) {
    double acc = 0.0;
    for (float v : f.values.plane(c)) acc += v;
    out[static_cast<std::size_t>(c)] = static_cast<float>(acc / static_cast<double>(f.values.plane_size()));
  }
  return out;
}

std::vector<Tensor3> DeskEmbedding::feature_maps(const Image& image) const {
  std::vector<Tensor3> out;
  for (int l : encoder_.layers()) out.push_back(encoder_.extract(image, l).values);
  return out;
}

std::shared_ptr<const EmbeddingBackend> make_embedding_backend(const std::string& id) {
  if (id == "identity") return std::make_shared<IdentityEmbedding>();
  if (id == "desk") return std::make_shared<DeskEmbedding>();
  throw InvalidArgument("unknown embedding backend '" + id + "'");
}

namespace {

void gaussian_fit(const std::vector<std::vector<float>>& xs, Eigen::VectorXd& mu, Eigen::MatrixXd& sigma) {
  const auto n = static_cast<Eigen::Index>(xs.size());
  const auto d = static_cast<Eigen::Index>(xs.front().size());
  Eigen::MatrixXd m(n, d);
  for (Eigen::Index i = 0; i < n; ++i) {
    if (static_cast<Eigen::Index>(xs[static_cast<std::size_t>(i)].size()) != d) {
      throw ShapeMismatch("fid: embeddings differ in dimension");
    }
    for (Eigen::Index j = 0; j < d; ++j) m(i, j) = xs[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
  }
  mu = m.colwise().mean();
  const Eigen::MatrixXd centered = m.rowwise() - mu.transpose();
  sigma = (centered.transpose() * centered) / static_cast<double>(n - 1);
}

// Tr((A B)^{1/2}) for symmetric PSD A, B via the eigenvalues of A^{1/2} B A^{1/2}.
bool trace_sqrt_product(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, double& out) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> ea(0.5 * (a + a.transpose()));
  if (ea.info() != Eigen::Success) return false;
  const double scale = std::max(1.0, ea.eigenvalues().cwiseAbs().maxCoeff());
  if (ea.eigenvalues().minCoeff() < -1e-9 * scale) return false;
  const Eigen::VectorXd sq = ea.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  const Eigen::MatrixXd a_half = ea.eigenvectors() * sq.asDiagonal() * ea.eigenvectors().transpose();
  Eigen::MatrixXd m = a_half * b * a_half;
  m = 0.5 * (m + m.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> em(m);
  if (em.info() != Eigen::Success) return false;
  const double mscale = std::max(1.0, em.eigenvalues().cwiseAbs().maxCoeff());
  if (em.eigenvalues().minCoeff() < -1e-9 * mscale) return false;
  out = em.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
  return std::isfinite(out);
}

}  // namespace

FidResult fid_from_embeddings(const std::vector<std::vector<float>>& a, const std::vector<std::vector<float>>& b) {
  if (a.empty() || b.empty()) throw InvalidArgument("fid: empty embedding set");
  const std::size_t d = a.front().size();
  if (a.size() < d + 1 || b.size() < d + 1) {
    throw InvalidArgument("fid: insufficient samples (" + std::to_string(std::min(a.size(), b.size())) +
                          ") for embedding dimension " + std::to_string(d));
  }
  Eigen::VectorXd mu_a, mu_b;
  Eigen::MatrixXd sa, sb;
  gaussian_fit(a, mu_a, sa);
  gaussian_fit(b, mu_b, sb);
  if (mu_a.size() != mu_b.size()) throw ShapeMismatch("fid: sets differ in embedding dimension");
  FidResult result;
  double tr_sqrt = 0.0;
  if (!trace_sqrt_product(sa, sb, tr_sqrt)) {
    const Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(sa.rows(), sa.cols());
    sa += 1e-6 * eye;
    sb += 1e-6 * eye;
    result.regularized = true;
    if (!trace_sqrt_product(sa, sb, tr_sqrt)) throw Error("fid: covariance square root failed after regularization");
  }
  result.value = (mu_a - mu_b).squaredNorm() + sa.trace() + sb.trace() - 2.0 * tr_sqrt;
  return result;
}

FidResult fid(const std::vector<Image>& a, const std::vector<Image>& b, const EmbeddingBackend& backend) {
  std::vector<std::vector<float>> ea, eb;
  for (const auto& img : a) ea.push_back(backend.embed(img));
  for (const auto& img : b) eb.push_back(backend.embed(img));
  return fid_from_embeddings(ea, eb);
}

double miou(const Grid<int>& pred, const Grid<int>& gt) {
  if (!pred.same_shape(gt)) throw ShapeMismatch("miou: maps differ in shape");
  if (gt.size() == 0) throw InvalidArgument("miou: empty ground truth");
  std::map<int, std::pair<std::size_t, std::size_t>> counts;  // category → (intersection, union)
  for (std::size_t i = 0; i < gt.size(); ++i) counts[gt[i]];
  for (std::size_t i = 0; i < gt.size(); ++i) {
    const int g = gt[i];
    const int p = pred[i];
    if (g == p) {
      ++counts[g].first;
      ++counts[g].second;
    } else {
      ++counts[g].second;
      if (auto it = counts.find(p); it != counts.end()) ++it->second.second;
    }
  }
  double acc = 0.0;
  for (const auto& [cat, iu] : counts) acc += static_cast<double>(iu.first) / static_cast<double>(iu.second);
  return acc / static_cast<double>(counts.size());
}

double lpips_like(const Image& a, const Image& b, const EmbeddingBackend& backend) {
  if (!a.pixels.same_shape(b.pixels)) throw ShapeMismatch("lpips: images differ in shape");
  const auto fa = backend.feature_maps(a);
  const auto fb = backend.feature_maps(b);
  double total = 0.0;
  for (std::size_t l = 0; l < fa.size(); ++l) {
    const Tensor3& x = fa[l];
    const Tensor3& y = fb[l];
    double layer = 0.0;
    for (int r = 0; r < x.height; ++r) {
      for (int c = 0; c < x.width; ++c) {
        double nx = 0.0;
        double ny = 0.0;
        for (int k = 0; k < x.channels; ++k) {
          nx += static_cast<double>(x.at(k, r, c)) * x.at(k, r, c);
          ny += static_cast<double>(y.at(k, r, c)) * y.at(k, r, c);
        }
        nx = std::sqrt(nx) + 1e-10;
        ny = std::sqrt(ny) + 1e-10;
        double d = 0.0;
        for (int k = 0; k < x.channels; ++k) {
          const double diff = x.at(k, r, c) / nx - y.at(k, r, c) / ny;
          d += diff * diff;
        }
        layer += d;
      }
    }
    total += layer / static_cast<double>(x.plane_size());
  }
  return total / static_cast<double>(fa.size());
}

Grid<int> color_segment(const Image& image, const std::vector<std::array<float, 3>>& colors,
                        const std::vector<int>& categories) {
  if (colors.empty() || colors.size() != categories.size()) throw InvalidArgument("color_segment: bad references");
  Grid<int> out(image.height(), image.width(), 0);
  for (int y = 0; y < image.height(); ++y) {
    for (int x = 0; x < image.width(); ++x) {
      double best = 1e30;
      for (std::size_t k = 0; k < colors.size(); ++k) {
        double d = 0.0;
        for (int c = 0; c < 3; ++c) d += std::pow(image.at(c, y, x) - colors[k][static_cast<std::size_t>(c)], 2);
        if (d < best) {
          best = d;
          out(y, x) = categories[k];
        }
      }
    }
  }
  return out;
}

std::array<float, 3> mean_color(const Image& image, const Mask& mask) {
  std::array<double, 3> acc{};
  std::size_t n = 0;
  for (int y = 0; y < image.height(); ++y) {
    for (int x = 0; x < image.width(); ++x) {
      if (!mask(y, x)) continue;
      for (int c = 0; c < 3; ++c) acc[static_cast<std::size_t>(c)] += image.at(c, y, x);
      ++n;
    }
  }
  if (n == 0) throw EmptyMask("mean_color over an empty mask");
  return {static_cast<float>(acc[0] / n), static_cast<float>(acc[1] / n), static_cast<float>(acc[2] / n)};
}

double color_distance(const std::array<float, 3>& a, const std::array<float, 3>& b) {
  double d = 0.0;
  for (int c = 0; c < 3; ++c) d += std::pow(static_cast<double>(a[static_cast<std::size_t>(c)]) - b[static_cast<std::size_t>(c)], 2);
  return std::sqrt(d);
}

}  // namespace pairdiff
