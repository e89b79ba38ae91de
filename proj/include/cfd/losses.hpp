// Loss functions for the teacher-student training scheme: the gamma-decayed
// sequence loss over recurrent disparity iterates, the channel-normalized
// feature distance, the triplet contrastive loss and the L1 feature
// distillation term.

#pragma once

#include <cmath>
#include <vector>

#include "cfd/image.hpp"
#include "cfd/tensor.hpp"

namespace cfd {

// sum_i gamma^(K-i) * mean|gt - d_i| over the valid mask, i = 1..K with the
// final prediction weighted gamma^0 = 1.
template <typename T>
Tensor<T> disparity_seq_loss(const std::vector<Tensor<T>>& preds, const MaskedGrid<float>& gt,
                             T gamma) {
    if (preds.empty()) throw std::invalid_argument("disparity_seq_loss: no predictions");
    const int64_t count = gt.valid_count();
    if (count == 0) throw std::invalid_argument("disparity_seq_loss: empty valid mask");
    Tensor<T> gt_t = tensor_from_grid<T>(gt.values);
    std::vector<T> mask_v(gt.valid.size());
    for (size_t i = 0; i < gt.valid.size(); ++i) mask_v[i] = gt.valid[i] ? T(1) : T(0);
    Tensor<T> mask = Tensor<T>::from_data(gt_t.shape(), std::move(mask_v));
    const T inv_count = T(1) / static_cast<T>(count);
    Tensor<T> total = Tensor<T>::scalar(T(0));
    const int k = static_cast<int>(preds.size());
    for (int i = 0; i < k; ++i) {
        if (preds[static_cast<size_t>(i)].shape() != gt_t.shape())
            throw std::invalid_argument("disparity_seq_loss: prediction shape " +
                                        shape_str(preds[static_cast<size_t>(i)].shape()) +
                                        " does not match gt " + shape_str(gt_t.shape()));
        const Tensor<T> err =
            mul_scalar(sum(mul(cfd::abs(sub(preds[static_cast<size_t>(i)], gt_t)), mask)),
                       inv_count);
        const T weight = static_cast<T>(std::pow(static_cast<double>(gamma), k - 1 - i));
        total = add(total, mul_scalar(err, weight));
    }
    return total;
}

// D(F1,F2) = (1/C) sum_i ||F1_i^norm - F2_i^norm||^2 with each channel map
// L2-normalized over its spatial positions. Bounded by [0,4]; invariant to
// positive per-channel rescaling.
template <typename T>
Tensor<T> channel_norm_distance(const Tensor<T>& f1, const Tensor<T>& f2) {
    if (f1.shape() != f2.shape())
        throw std::invalid_argument("channel_norm_distance: shape mismatch " +
                                    shape_str(f1.shape()) + " vs " + shape_str(f2.shape()));
    const T inv_c = T(1) / static_cast<T>(f1.dim(2));
    const Tensor<T> diff = sub(channel_l2_normalize(f1), channel_l2_normalize(f2));
    return mul_scalar(sum(square(diff)), inv_c);
}

// max(D(anchor,positive) - D(anchor,negative) + m, 0).
template <typename T>
Tensor<T> triplet_contrastive_loss(const Tensor<T>& anchor, const Tensor<T>& positive,
                                   const Tensor<T>& negative, T margin) {
    if (margin <= T(0)) throw std::invalid_argument("triplet_contrastive_loss: margin must be > 0");
    const Tensor<T> d_pos = channel_norm_distance(anchor, positive);
    const Tensor<T> d_neg = channel_norm_distance(anchor, negative);
    return relu(add_scalar(sub(d_pos, d_neg), margin));
}

// ||T - S_clean||_1 + ||T - S_fog||_1 with mean reduction per term. The
// teacher feature is detached here, so no gradient can reach it.
template <typename T>
Tensor<T> distillation_loss(const Tensor<T>& teacher_fused, const Tensor<T>& student_clean,
                            const Tensor<T>& student_fog) {
    if (teacher_fused.shape() != student_clean.shape() ||
        teacher_fused.shape() != student_fog.shape())
        throw std::invalid_argument("distillation_loss: shape mismatch");
    const Tensor<T> target = teacher_fused.detach();
    return add(mean(cfd::abs(sub(student_clean, target))),
               mean(cfd::abs(sub(student_fog, target))));
}

}  // namespace cfd
