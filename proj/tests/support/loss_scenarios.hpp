#pragma once

#include <string>
#include <vector>

#include "cosingan/eval.hpp"
#include "cosingan/losses.hpp"
#include "cosingan/nets.hpp"
#include "oracles.hpp"

namespace scenarios {

struct NamedCheck {
  std::string name;
  oracle::GradCheck result;
};

/// Finite-difference checks for the four reconstruction terms and both
/// adversarial objectives on 16x16 double inputs.
inline std::vector<NamedCheck> gradient_checks(int probes, uint64_t seed) {
  using namespace cosingan;
  torch::manual_seed(seed);
  const auto opts = torch::TensorOptions().dtype(torch::kDouble);
  const auto real = torch::rand({2, 1, 16, 16}, opts) * 2 - 1;
  const auto gen = (real + 0.3 * torch::randn({2, 1, 16, 16}, opts)).clamp(-1, 1);
  const auto labels = torch::randint(0, 3, {2, 1, 16, 16}, torch::TensorOptions().dtype(torch::kLong));
  const auto cond = labels.to(torch::kDouble) - 1.0;

  auto backbones = eval::random_feature_backbones(seed + 1);
  backbones.vgg->to(torch::kDouble);
  backbones.unet->to(torch::kDouble);
  const losses::FeatureLossConfig vgg_cfg{{0, 1, 2, 3, 4}, {1, 1, 1, 1, 1}, losses::BackboneKind::classifier_features};
  const losses::FeatureLossConfig unet_cfg{{0, 1, 2, 3, 4}, {1, 1, 1, 1, 1}, losses::BackboneKind::segmenter_features};

  std::vector<NamedCheck> out;
  out.push_back({"wppl", oracle::central_difference(
                             [&](const torch::Tensor& g) { return losses::loss_wppl(labels, g, real, {}); }, gen, probes, seed + 2)});
  out.push_back({"ms_ssim", oracle::central_difference(
                                [&](const torch::Tensor& g) { return losses::loss_ms_ssim(g, real); }, gen, probes, seed + 3)});
  out.push_back({"ms_fvl", oracle::central_difference(
                               [&](const torch::Tensor& g) {
                                 return losses::loss_feature(g, real, *backbones.vgg, vgg_cfg, losses::FeatureNorm::l1);
                               },
                               gen, probes, seed + 4)});
  out.push_back({"ms_ful", oracle::central_difference(
                               [&](const torch::Tensor& g) {
                                 return losses::loss_feature(g, real, *backbones.unet, unet_cfg, losses::FeatureNorm::l2);
                               },
                               gen, probes, seed + 5)});

  torch::manual_seed(seed + 6);
  auto disc = nets::build_discriminator({6, 2, 8});
  disc->to(torch::kDouble);
  out.push_back({"adv_g", oracle::central_difference(
                              [&](const torch::Tensor& g) { return losses::adv_g_objective(disc, cond, g); }, gen, probes, seed + 7)});
  // The discriminator objective trains D, so check it against D's weights.
  auto w0 = disc->parameters().front();
  out.push_back({"adv_d", oracle::central_difference_param(
                              [&]() { return losses::adv_d_objective(disc, cond, gen, real); }, w0, probes, seed + 8)});
  return out;
}

/// Mask [[0,2],[2,2]], unit absolute error everywhere, weights 0.1/0.5/1.0.
inline double wppl_hand_case() {
  using namespace cosingan;
  auto labels = torch::tensor({0, 2, 2, 2}, torch::kLong).view({1, 1, 2, 2});
  auto real = torch::zeros({1, 1, 2, 2}, torch::kDouble);
  auto gen = torch::tensor({1.0, -1.0, 1.0, -1.0}, torch::kDouble).view({1, 1, 2, 2});
  return losses::loss_wppl(labels, gen, real, {0.1, 0.5, 1.0}).item<double>();
}

}  // namespace scenarios
