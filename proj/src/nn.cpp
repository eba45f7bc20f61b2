#include "unirit/nn.hpp"

#include "unirit/rotation.hpp"

namespace unirit::nn {

std::string to_string(Activation a) {
  switch (a) {
    case Activation::relu:
      return "relu";
    case Activation::leaky_relu:
      return "leaky_relu";
    case Activation::tanh:
      return "tanh";
    case Activation::none:
      return "none";
  }
  return "none";
}

Activation activation_from_string(const std::string& name) {
  if (name == "relu") return Activation::relu;
  if (name == "leaky_relu") return Activation::leaky_relu;
  if (name == "tanh") return Activation::tanh;
  if (name == "none") return Activation::none;
  throw ValidationError("unknown activation '" + name + "'");
}

std::string to_string(Pooling p) { return p == Pooling::max ? "max" : "mean"; }

Pooling pooling_from_string(const std::string& name) {
  if (name == "max") return Pooling::max;
  if (name == "mean") return Pooling::mean;
  throw ValidationError("unknown pooling '" + name + "'");
}

}  // namespace unirit::nn

namespace unirit {

std::string to_string(RotationParam p) { return p == RotationParam::six_d ? "six_d" : "axis_angle"; }

RotationParam rotation_param_from_string(const std::string& name) {
  if (name == "six_d") return RotationParam::six_d;
  if (name == "axis_angle") return RotationParam::axis_angle;
  throw ValidationError("unknown rotation parameterization '" + name + "'");
}

}  // namespace unirit
