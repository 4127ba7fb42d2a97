#pragma once

#include <vector>

#include "nasbnn/tensor.hpp"

namespace nasbnn::nn {

struct ConvSpec {
    int stride = 1;
    int pad = 0;
    int groups = 1;
};

int conv_out_size(int size, int k, int stride, int pad);

// x [N,C,H,W], w [Co,C/g,k,k] -> y [N,Co,Ho,Wo]. im2col + sgemm, parallel over
// images; results do not depend on the thread count.
void conv2d_forward(const Tensor& x, const Tensor& w, const ConvSpec& spec, Tensor& y);

// dy [N,Co,Ho,Wo] -> dx [N,C,H,W] (overwritten).
void conv2d_backward_input(const Tensor& dy, const Tensor& w, const ConvSpec& spec, Tensor& dx);

// Accumulates into dw. Images are processed in fixed-size chunks whose
// partial sums are reduced in chunk order, so the result is identical for
// any thread count.
void conv2d_backward_weight(const Tensor& dy, const Tensor& x, const ConvSpec& spec, Tensor& dw);

// Population statistics over N,H,W per channel, accumulated in double.
void bn_stats(const Tensor& x, std::vector<double>& mean, std::vector<double>& var);

// y = gamma * (x - mean)/sqrt(var+eps) + beta; optionally records xhat.
void bn_forward(const Tensor& x, const float* gamma, const float* beta, const double* mean,
                const double* var, double eps, Tensor& y, Tensor* xhat);

// Backward through training-mode BN (statistics depend on the batch).
// dgamma/dbeta may be null; when given they are accumulated into.
void bn_backward(const Tensor& xhat, const float* gamma, const double* var, double eps,
                 const Tensor& dy, Tensor& dx, float* dgamma, float* dbeta);

// 2x2/stride-2 average pooling, ceil mode, divisor = number of valid cells.
void avgpool2x2_forward(const Tensor& x, Tensor& y);
void avgpool2x2_backward(const Tensor& dy, int in_h, int in_w, Tensor& dx);

void global_avgpool_forward(const Tensor& x, Tensor& y);                     // [N,C,H,W]->[N,C]
void global_avgpool_backward(const Tensor& dy, int in_h, int in_w, Tensor& dx);

// x [N,in] * w[out,in] (row stride ldw) + bias -> y [N,out]
void linear_forward(const Tensor& x, const float* w, int ldw, const float* bias, int in_dim,
                    int out_dim, Tensor& y);
void linear_backward(const Tensor& x, const float* w, int ldw, const Tensor& dy, int in_dim,
                     int out_dim, Tensor& dx, float* dw, int lddw, float* dbias);

// Mean cross entropy over the batch. Fills dlogits (already scaled by 1/N)
// and softmax probabilities when non-null.
double softmax_cross_entropy(const Tensor& logits, const std::vector<int>& labels, Tensor* dlogits,
                             Tensor* probs);

// KL(teacher ‖ student), mean over the batch, teacher given as probabilities
// and treated as constant. dlogits gets (p_student - p_teacher)/N.
double kl_teacher_student(const Tensor& teacher_probs, const Tensor& student_logits,
                          Tensor* dlogits);

double top1_accuracy(const Tensor& logits, const std::vector<int>& labels);

}  // namespace nasbnn::nn
