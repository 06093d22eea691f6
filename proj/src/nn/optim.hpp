#pragma once

#include <map>
#include <string>
#include <vector>

#include "core/blob.hpp"
#include "core/graph.hpp"

namespace dfkd {
namespace nn {

// SGD with classical momentum: v = mu*v + (g + wd*w); w -= lr*v.
class Sgd {
public:
    Sgd(std::vector<Parameter*> params, double lr, double momentum, double weight_decay);

    void zero_grad();
    void step();
    void set_lr(double lr) { lr_ = lr; }
    double lr() const { return lr_; }

    void save(BlobWriter& w, const std::string& prefix) const;
    void load(const std::map<std::string, Tensor>& blob, const std::string& prefix);

private:
    std::vector<Parameter*> params_;
    std::vector<Tensor> velocity_;
    double lr_, momentum_, weight_decay_;
};

// Adam / AdamW. With decoupled_decay the weight decay is applied directly to
// the weights (AdamW); otherwise it is folded into the gradient.
class Adam {
public:
    Adam(std::vector<Parameter*> params, double lr, double beta1, double beta2, double eps,
         double weight_decay, bool decoupled_decay);

    void zero_grad();
    void step();
    void set_lr(double lr) { lr_ = lr; }
    double lr() const { return lr_; }

    void save(BlobWriter& w, const std::string& prefix) const;
    void load(const std::map<std::string, Tensor>& blob, const std::string& prefix);

private:
    std::vector<Parameter*> params_;
    std::vector<Tensor> m_, v_;
    double lr_, beta1_, beta2_, eps_, weight_decay_;
    bool decoupled_;
    int64_t t_ = 0;
};

} // namespace nn
} // namespace dfkd
