#pragma once

#include <utility>
#include <vector>

#include "srforge/models.hpp"
#include "srforge/nn.hpp"

namespace srforge::train {

using nn::Tensor;

/// Weighting of the combined generator objective
/// L_G = L_percep + lambda * L_G^Ra + eta * L_1.
struct LossWeights {
    double lambda = 5e-3;
    double eta = 1e-2;
    std::vector<double> percep_layer_weights{0.1, 0.1, 1.0, 1.0, 1.0};

    void validate() const {
        require(lambda >= 0.0 && eta >= 0.0, "train", "loss weights must be non-negative");
        for (const double w : percep_layer_weights)
            require(w >= 0.0, "train", "perceptual layer weights must be non-negative");
    }
};

/// Mean absolute error between generated and target batches.
inline Tensor l1_loss(const Tensor& gen_out, const Tensor& target) {
    nn::check_same_shape(gen_out, target, "l1_loss");
    return nn::mean_all(nn::abs(nn::sub(gen_out, target)));
}

/// Weighted mean absolute feature distance over the backbone's stage taps.
/// The backbone must be frozen; gradients flow only into `gen_out`.
inline Tensor perceptual_loss(const Tensor& gen_out, const Tensor& target,
                              zoo::FeatureBackboneModel& backbone,
                              const std::vector<double>& layer_weights) {
    nn::check_same_shape(gen_out, target, "perceptual_loss");
    for (const auto& p : backbone.registry().parameters())
        require(!p.tensor.requires_grad(), "train",
                "perceptual backbone must be frozen (parameter " + p.name + " wants grad)");
    auto gen_taps = backbone.forward_taps(gen_out);
    auto target_taps = backbone.forward_taps(target);
    require(layer_weights.size() == gen_taps.size(), "train",
            "perceptual layer weight count must match tap count");
    Tensor total = Tensor::scalar(0.0);
    for (std::size_t l = 0; l < gen_taps.size(); ++l) {
        Tensor term = nn::mean_all(nn::abs(nn::sub(gen_taps[l], target_taps[l])));
        total = nn::add(total, nn::scale(term, layer_weights[l]));
    }
    return total;
}

/// Relativistic average logits: z_rf = C(x_r) - E[C(x_f)] and
/// z_fr = C(x_f) - E[C(x_r)]. Means run over the whole discriminator output
/// (batch, and spatial positions for the per-pixel U-Net head). The sigmoid
/// of these logits gives the D_Ra values; losses below consume the logits
/// directly through softplus identities so no log-of-sigmoid is evaluated.
inline std::pair<Tensor, Tensor> relativistic_logits(const Tensor& c_real,
                                                     const Tensor& c_fake) {
    Tensor z_rf = nn::sub_broadcast(c_real, nn::mean_all(c_fake));
    Tensor z_fr = nn::sub_broadcast(c_fake, nn::mean_all(c_real));
    return {z_rf, z_fr};
}

/// L_G^Ra = -E[log(1 - sigma(z_rf))] - E[log sigma(z_fr)]
///        =  E[softplus(z_rf)] + E[softplus(-z_fr)].
inline Tensor generator_adv_loss(const Tensor& z_rf, const Tensor& z_fr) {
    return nn::add(nn::mean_all(nn::softplus(z_rf)),
                   nn::mean_all(nn::softplus(nn::neg(z_fr))));
}

/// L_D^Ra = -E[log sigma(z_rf)] - E[log(1 - sigma(z_fr))]
///        =  E[softplus(-z_rf)] + E[softplus(z_fr)].
inline Tensor discriminator_adv_loss(const Tensor& z_rf, const Tensor& z_fr) {
    return nn::add(nn::mean_all(nn::softplus(nn::neg(z_rf))),
                   nn::mean_all(nn::softplus(z_fr)));
}

/// L_G = L_percep + lambda * L_G^Ra + eta * L_1.
inline Tensor total_generator_loss(const Tensor& percep, const Tensor& adversarial,
                                   const Tensor& l1, const LossWeights& w) {
    for (const Tensor* part : {&percep, &adversarial, &l1})
        require(std::isfinite(part->item()), "train",
                "divergence: non-finite loss component");
    return nn::add(nn::add(percep, nn::scale(adversarial, w.lambda)), nn::scale(l1, w.eta));
}

} // namespace srforge::train
