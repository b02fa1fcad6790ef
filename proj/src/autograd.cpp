#include "pmm/autograd.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <unordered_set>

namespace pmm::ag {

namespace {

using EMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using EMap = Eigen::Map<EMat>;
using ECMap = Eigen::Map<const EMat>;

ECMap emap(const Tensor& t) { return ECMap(t.data.data(), t.rows, t.cols); }
EMap emap(Tensor& t) { return EMap(t.data.data(), t.rows, t.cols); }

std::atomic<long long> g_next_id{1};

bool any_requires_grad(const std::vector<Value>& parents) {
  for (const auto& p : parents) {
    if (p->requires_grad) return true;
  }
  return false;
}

}  // namespace

Value make_node(Tensor val, bool requires_grad, std::vector<Value> parents,
                std::function<void(Node&)> backward_fn) {
  auto n = std::make_shared<Node>();
  n->val = std::move(val);
  n->requires_grad = requires_grad;
  n->parents = std::move(parents);
  n->backward_fn = std::move(backward_fn);
  n->id = g_next_id.fetch_add(1);
  return n;
}

Value constant(Tensor t) { return make_node(std::move(t), false, {}, nullptr); }

Value parameter(Tensor t) { return make_node(std::move(t), true, {}, nullptr); }

void zero_grad(const Value& leaf) {
  if (leaf->grad.size() != 0) leaf->grad.fill(0.0);
}

void backward(const Value& root) {
  if (root->val.size() != 1) throw std::logic_error("backward: root must be scalar");
  root->ensure_grad().data[0] = 1.0;

  // Collect the reachable subgraph, then run closures in descending creation
  // order (a valid reverse topological order).
  std::vector<Node*> order;
  std::vector<Value> stack{root};
  std::unordered_set<Node*> seen;
  while (!stack.empty()) {
    Value v = stack.back();
    stack.pop_back();
    if (!seen.insert(v.get()).second) continue;
    order.push_back(v.get());
    for (const auto& p : v->parents) stack.push_back(p);
  }
  std::sort(order.begin(), order.end(),
            [](const Node* a, const Node* b) { return a->id > b->id; });
  for (Node* n : order) {
    if (n->backward_fn && n->requires_grad && n->grad.size() != 0) n->backward_fn(*n);
  }
}

namespace {

Value unary(const Value& a, Tensor out, std::function<void(Node&, Node&)> back) {
  bool rg = a->requires_grad;
  std::function<void(Node&)> fn;
  if (rg) {
    fn = [a, back = std::move(back)](Node& self) {
      if (a->requires_grad) {
        a->ensure_grad();
        back(self, *a);
      }
    };
  }
  return make_node(std::move(out), rg, {a}, std::move(fn));
}

}  // namespace

Value matmul(const Value& a, const Value& b) {
  check_shape(a->val.cols == b->val.rows,
              "matmul " + a->val.shape_str() + " x " + b->val.shape_str());
  Tensor out(a->val.rows, b->val.cols);
  emap(out) = emap(a->val) * emap(b->val);
  bool rg = a->requires_grad || b->requires_grad;
  std::function<void(Node&)> fn;
  if (rg) {
    fn = [a, b](Node& self) {
      if (a->requires_grad) {
        a->ensure_grad();
        emap(a->grad) += emap(self.grad) * emap(b->val).transpose();
      }
      if (b->requires_grad) {
        b->ensure_grad();
        emap(b->grad) += emap(a->val).transpose() * emap(self.grad);
      }
    };
  }
  return make_node(std::move(out), rg, {a, b}, std::move(fn));
}

Value transpose(const Value& a) {
  Tensor out(a->val.cols, a->val.rows);
  emap(out) = emap(a->val).transpose();
  return unary(a, std::move(out), [](Node& self, Node& pa) {
    emap(pa.grad) += emap(self.grad).transpose();
  });
}

Value reshape(const Value& a, int rows, int cols) {
  check_shape(rows * cols == a->val.size(), "reshape to " + std::to_string(rows) + "x" +
                                                std::to_string(cols) + " from " +
                                                a->val.shape_str());
  Tensor out(rows, cols, a->val.data);
  return unary(a, std::move(out), [](Node& self, Node& pa) {
    for (int i = 0; i < self.val.size(); ++i) pa.grad.data[i] += self.grad.data[i];
  });
}

Value add(const Value& a, const Value& b) {
  check_shape(a->val.same_shape(b->val), "add " + a->val.shape_str() + " + " + b->val.shape_str());
  Tensor out = a->val;
  for (int i = 0; i < out.size(); ++i) out.data[i] += b->val.data[i];
  bool rg = a->requires_grad || b->requires_grad;
  std::function<void(Node&)> fn;
  if (rg) {
    fn = [a, b](Node& self) {
      if (a->requires_grad) {
        a->ensure_grad();
        for (int i = 0; i < self.val.size(); ++i) a->grad.data[i] += self.grad.data[i];
      }
      if (b->requires_grad) {
        b->ensure_grad();
        for (int i = 0; i < self.val.size(); ++i) b->grad.data[i] += self.grad.data[i];
      }
    };
  }
  return make_node(std::move(out), rg, {a, b}, std::move(fn));
}

Value sub(const Value& a, const Value& b) {
  check_shape(a->val.same_shape(b->val), "sub " + a->val.shape_str() + " - " + b->val.shape_str());
  Tensor out = a->val;
  for (int i = 0; i < out.size(); ++i) out.data[i] -= b->val.data[i];
  bool rg = a->requires_grad || b->requires_grad;
  std::function<void(Node&)> fn;
  if (rg) {
    fn = [a, b](Node& self) {
      if (a->requires_grad) {
        a->ensure_grad();
        for (int i = 0; i < self.val.size(); ++i) a->grad.data[i] += self.grad.data[i];
      }
      if (b->requires_grad) {
        b->ensure_grad();
        for (int i = 0; i < self.val.size(); ++i) b->grad.data[i] -= self.grad.data[i];
      }
    };
  }
  return make_node(std::move(out), rg, {a, b}, std::move(fn));
}

Value mul(const Value& a, const Value& b) {
  check_shape(a->val.same_shape(b->val), "mul " + a->val.shape_str() + " * " + b->val.shape_str());
  Tensor out = a->val;
  for (int i = 0; i < out.size(); ++i) out.data[i] *= b->val.data[i];
  bool rg = a->requires_grad || b->requires_grad;
  std::function<void(Node&)> fn;
  if (rg) {
    fn = [a, b](Node& self) {
      if (a->requires_grad) {
        a->ensure_grad();
        for (int i = 0; i < self.val.size(); ++i)
          a->grad.data[i] += self.grad.data[i] * b->val.data[i];
      }
      if (b->requires_grad) {
        b->ensure_grad();
        for (int i = 0; i < self.val.size(); ++i)
          b->grad.data[i] += self.grad.data[i] * a->val.data[i];
      }
    };
  }
  return make_node(std::move(out), rg, {a, b}, std::move(fn));
}

Value scale(const Value& a, double s) {
  Tensor out = a->val;
  for (double& v : out.data) v *= s;
  return unary(a, std::move(out), [s](Node& self, Node& pa) {
    for (int i = 0; i < self.val.size(); ++i) pa.grad.data[i] += self.grad.data[i] * s;
  });
}

Value add_rowvec(const Value& a, const Value& bias) {
  check_shape(bias->val.rows == 1 && bias->val.cols == a->val.cols,
              "add_rowvec " + a->val.shape_str() + " + " + bias->val.shape_str());
  Tensor out = a->val;
  for (int r = 0; r < out.rows; ++r)
    for (int c = 0; c < out.cols; ++c) out.at(r, c) += bias->val.data[c];
  bool rg = a->requires_grad || bias->requires_grad;
  std::function<void(Node&)> fn;
  if (rg) {
    fn = [a, bias](Node& self) {
      if (a->requires_grad) {
        a->ensure_grad();
        for (int i = 0; i < self.val.size(); ++i) a->grad.data[i] += self.grad.data[i];
      }
      if (bias->requires_grad) {
        bias->ensure_grad();
        for (int r = 0; r < self.val.rows; ++r)
          for (int c = 0; c < self.val.cols; ++c)
            bias->grad.data[c] += self.grad.at(r, c);
      }
    };
  }
  return make_node(std::move(out), rg, {a, bias}, std::move(fn));
}

Value mul_colvec(const Value& a, const Value& s) {
  check_shape(s->val.cols == 1 && s->val.rows == a->val.rows,
              "mul_colvec " + a->val.shape_str() + " * " + s->val.shape_str());
  Tensor out = a->val;
  for (int r = 0; r < out.rows; ++r)
    for (int c = 0; c < out.cols; ++c) out.at(r, c) *= s->val.data[r];
  bool rg = a->requires_grad || s->requires_grad;
  std::function<void(Node&)> fn;
  if (rg) {
    fn = [a, s](Node& self) {
      if (a->requires_grad) {
        a->ensure_grad();
        for (int r = 0; r < self.val.rows; ++r)
          for (int c = 0; c < self.val.cols; ++c)
            a->grad.at(r, c) += self.grad.at(r, c) * s->val.data[r];
      }
      if (s->requires_grad) {
        s->ensure_grad();
        for (int r = 0; r < self.val.rows; ++r)
          for (int c = 0; c < self.val.cols; ++c)
            s->grad.data[r] += self.grad.at(r, c) * a->val.at(r, c);
      }
    };
  }
  return make_node(std::move(out), rg, {a, s}, std::move(fn));
}

Value affine(const Value& a, const Value& w, const Value& bias) {
  return add_rowvec(matmul(a, w), bias);
}

Value sigmoid(const Value& a) {
  Tensor out = a->val;
  for (double& v : out.data) v = 1.0 / (1.0 + std::exp(-v));
  return unary(a, std::move(out), [](Node& self, Node& pa) {
    for (int i = 0; i < self.val.size(); ++i) {
      double y = self.val.data[i];
      pa.grad.data[i] += self.grad.data[i] * y * (1.0 - y);
    }
  });
}

Value tanh_(const Value& a) {
  Tensor out = a->val;
  for (double& v : out.data) v = std::tanh(v);
  return unary(a, std::move(out), [](Node& self, Node& pa) {
    for (int i = 0; i < self.val.size(); ++i) {
      double y = self.val.data[i];
      pa.grad.data[i] += self.grad.data[i] * (1.0 - y * y);
    }
  });
}

Value relu(const Value& a) {
  Tensor out = a->val;
  for (double& v : out.data) v = v > 0.0 ? v : 0.0;
  return unary(a, std::move(out), [a](Node& self, Node& pa) {
    for (int i = 0; i < self.val.size(); ++i)
      if (a->val.data[i] > 0.0) pa.grad.data[i] += self.grad.data[i];
  });
}

Value leaky_relu(const Value& a, double slope) {
  Tensor out = a->val;
  for (double& v : out.data) v = v > 0.0 ? v : slope * v;
  return unary(a, std::move(out), [a, slope](Node& self, Node& pa) {
    for (int i = 0; i < self.val.size(); ++i)
      pa.grad.data[i] += self.grad.data[i] * (a->val.data[i] > 0.0 ? 1.0 : slope);
  });
}

Value prelu(const Value& a, const Value& slope) {
  check_shape(slope->val.size() == 1, "prelu slope must be 1x1");
  double s = slope->val.data[0];
  Tensor out = a->val;
  for (double& v : out.data) v = v > 0.0 ? v : s * v;
  bool rg = a->requires_grad || slope->requires_grad;
  std::function<void(Node&)> fn;
  if (rg) {
    fn = [a, slope](Node& self) {
      double s = slope->val.data[0];
      if (a->requires_grad) {
        a->ensure_grad();
        for (int i = 0; i < self.val.size(); ++i)
          a->grad.data[i] += self.grad.data[i] * (a->val.data[i] > 0.0 ? 1.0 : s);
      }
      if (slope->requires_grad) {
        slope->ensure_grad();
        for (int i = 0; i < self.val.size(); ++i)
          if (a->val.data[i] <= 0.0)
            slope->grad.data[0] += self.grad.data[i] * a->val.data[i];
      }
    };
  }
  return make_node(std::move(out), rg, {a, slope}, std::move(fn));
}

Value log_(const Value& a) {
  Tensor out = a->val;
  for (double& v : out.data) v = std::log(v);
  return unary(a, std::move(out), [a](Node& self, Node& pa) {
    for (int i = 0; i < self.val.size(); ++i)
      pa.grad.data[i] += self.grad.data[i] / a->val.data[i];
  });
}

Value square(const Value& a) {
  Tensor out = a->val;
  for (double& v : out.data) v = v * v;
  return unary(a, std::move(out), [a](Node& self, Node& pa) {
    for (int i = 0; i < self.val.size(); ++i)
      pa.grad.data[i] += self.grad.data[i] * 2.0 * a->val.data[i];
  });
}

Value clamp(const Value& a, double lo, double hi) {
  Tensor out = a->val;
  for (double& v : out.data) v = std::min(hi, std::max(lo, v));
  return unary(a, std::move(out), [a, lo, hi](Node& self, Node& pa) {
    for (int i = 0; i < self.val.size(); ++i) {
      double x = a->val.data[i];
      if (x > lo && x < hi) pa.grad.data[i] += self.grad.data[i];
    }
  });
}

Value softmax_rows(const Value& a) {
  Tensor out = a->val;
  for (int r = 0; r < out.rows; ++r) {
    double mx = out.at(r, 0);
    for (int c = 1; c < out.cols; ++c) mx = std::max(mx, out.at(r, c));
    double sum = 0.0;
    for (int c = 0; c < out.cols; ++c) {
      double e = std::exp(out.at(r, c) - mx);
      out.at(r, c) = e;
      sum += e;
    }
    for (int c = 0; c < out.cols; ++c) out.at(r, c) /= sum;
  }
  return unary(a, std::move(out), [](Node& self, Node& pa) {
    // dx = y * (dy - sum(dy * y)) per row
    for (int r = 0; r < self.val.rows; ++r) {
      double dot = 0.0;
      for (int c = 0; c < self.val.cols; ++c)
        dot += self.grad.at(r, c) * self.val.at(r, c);
      for (int c = 0; c < self.val.cols; ++c)
        pa.grad.at(r, c) += self.val.at(r, c) * (self.grad.at(r, c) - dot);
    }
  });
}

Value layer_norm_rows(const Value& a, const Value& gain, const Value& bias, double eps) {
  check_shape(gain->val.rows == 1 && gain->val.cols == a->val.cols &&
                  bias->val.rows == 1 && bias->val.cols == a->val.cols,
              "layer_norm params vs " + a->val.shape_str());
  int n = a->val.cols;
  Tensor out(a->val.rows, n);
  Tensor xhat(a->val.rows, n);
  std::vector<double> inv_std(a->val.rows);
  for (int r = 0; r < a->val.rows; ++r) {
    double mean = 0.0;
    for (int c = 0; c < n; ++c) mean += a->val.at(r, c);
    mean /= n;
    double var = 0.0;
    for (int c = 0; c < n; ++c) {
      double d = a->val.at(r, c) - mean;
      var += d * d;
    }
    var /= n;
    double is = 1.0 / std::sqrt(var + eps);
    inv_std[r] = is;
    for (int c = 0; c < n; ++c) {
      double xh = (a->val.at(r, c) - mean) * is;
      xhat.at(r, c) = xh;
      out.at(r, c) = xh * gain->val.data[c] + bias->val.data[c];
    }
  }
  bool rg = a->requires_grad || gain->requires_grad || bias->requires_grad;
  std::function<void(Node&)> fn;
  if (rg) {
    fn = [a, gain, bias, xhat = std::move(xhat), inv_std = std::move(inv_std),
          n](Node& self) {
      if (gain->requires_grad) {
        gain->ensure_grad();
        for (int r = 0; r < self.val.rows; ++r)
          for (int c = 0; c < n; ++c)
            gain->grad.data[c] += self.grad.at(r, c) * xhat.at(r, c);
      }
      if (bias->requires_grad) {
        bias->ensure_grad();
        for (int r = 0; r < self.val.rows; ++r)
          for (int c = 0; c < n; ++c) bias->grad.data[c] += self.grad.at(r, c);
      }
      if (a->requires_grad) {
        a->ensure_grad();
        for (int r = 0; r < self.val.rows; ++r) {
          double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
          for (int c = 0; c < n; ++c) {
            double dxh = self.grad.at(r, c) * gain->val.data[c];
            sum_dxhat += dxh;
            sum_dxhat_xhat += dxh * xhat.at(r, c);
          }
          for (int c = 0; c < n; ++c) {
            double dxh = self.grad.at(r, c) * gain->val.data[c];
            a->grad.at(r, c) += inv_std[r] / n *
                                (n * dxh - sum_dxhat - xhat.at(r, c) * sum_dxhat_xhat);
          }
        }
      }
    };
  }
  return make_node(std::move(out), rg, {a, gain, bias}, std::move(fn));
}

Value concat_rows(const std::vector<Value>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: empty");
  int cols = parts[0]->val.cols;
  int rows = 0;
  for (const auto& p : parts) {
    check_shape(p->val.cols == cols, "concat_rows column mismatch");
    rows += p->val.rows;
  }
  Tensor out(rows, cols);
  int r0 = 0;
  for (const auto& p : parts) {
    std::copy(p->val.data.begin(), p->val.data.end(),
              out.data.begin() + static_cast<size_t>(r0) * cols);
    r0 += p->val.rows;
  }
  bool rg = any_requires_grad(parts);
  std::function<void(Node&)> fn;
  if (rg) {
    fn = [parts](Node& self) {
      int r0 = 0;
      for (const auto& p : parts) {
        if (p->requires_grad) {
          p->ensure_grad();
          for (int r = 0; r < p->val.rows; ++r)
            for (int c = 0; c < p->val.cols; ++c)
              p->grad.at(r, c) += self.grad.at(r0 + r, c);
        }
        r0 += p->val.rows;
      }
    };
  }
  return make_node(std::move(out), rg, parts, std::move(fn));
}

Value concat_cols(const std::vector<Value>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: empty");
  int rows = parts[0]->val.rows;
  int cols = 0;
  for (const auto& p : parts) {
    check_shape(p->val.rows == rows, "concat_cols row mismatch");
    cols += p->val.cols;
  }
  Tensor out(rows, cols);
  int c0 = 0;
  for (const auto& p : parts) {
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < p->val.cols; ++c) out.at(r, c0 + c) = p->val.at(r, c);
    c0 += p->val.cols;
  }
  bool rg = any_requires_grad(parts);
  std::function<void(Node&)> fn;
  if (rg) {
    fn = [parts](Node& self) {
      int c0 = 0;
      for (const auto& p : parts) {
        if (p->requires_grad) {
          p->ensure_grad();
          for (int r = 0; r < p->val.rows; ++r)
            for (int c = 0; c < p->val.cols; ++c)
              p->grad.at(r, c) += self.grad.at(r, c0 + c);
        }
        c0 += p->val.cols;
      }
    };
  }
  return make_node(std::move(out), rg, parts, std::move(fn));
}

Value slice_rows(const Value& a, int r0, int r1) {
  check_shape(0 <= r0 && r0 < r1 && r1 <= a->val.rows, "slice_rows range");
  Tensor out(r1 - r0, a->val.cols);
  for (int r = r0; r < r1; ++r)
    for (int c = 0; c < a->val.cols; ++c) out.at(r - r0, c) = a->val.at(r, c);
  return unary(a, std::move(out), [r0](Node& self, Node& pa) {
    for (int r = 0; r < self.val.rows; ++r)
      for (int c = 0; c < self.val.cols; ++c)
        pa.grad.at(r0 + r, c) += self.grad.at(r, c);
  });
}

Value slice_cols(const Value& a, int c0, int c1) {
  check_shape(0 <= c0 && c0 < c1 && c1 <= a->val.cols, "slice_cols range");
  Tensor out(a->val.rows, c1 - c0);
  for (int r = 0; r < a->val.rows; ++r)
    for (int c = c0; c < c1; ++c) out.at(r, c - c0) = a->val.at(r, c);
  return unary(a, std::move(out), [c0](Node& self, Node& pa) {
    for (int r = 0; r < self.val.rows; ++r)
      for (int c = 0; c < self.val.cols; ++c)
        pa.grad.at(r, c0 + c) += self.grad.at(r, c);
  });
}

Value sum_all(const Value& a) {
  double s = 0.0;
  for (double v : a->val.data) s += v;
  return unary(a, Tensor::scalar(s), [](Node& self, Node& pa) {
    for (int i = 0; i < pa.val.size(); ++i) pa.grad.data[i] += self.grad.data[0];
  });
}

Value mean_all(const Value& a) { return scale(sum_all(a), 1.0 / a->val.size()); }

Value dropout(const Value& a, double p, std::mt19937_64& rng) {
  if (p <= 0.0) return a;
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  Tensor mask(a->val.rows, a->val.cols);
  double keep = 1.0 - p;
  for (double& m : mask.data) m = (uni(rng) < keep) ? 1.0 / keep : 0.0;
  Tensor out = a->val;
  for (int i = 0; i < out.size(); ++i) out.data[i] *= mask.data[i];
  return unary(a, std::move(out), [mask](Node& self, Node& pa) {
    for (int i = 0; i < self.val.size(); ++i)
      pa.grad.data[i] += self.grad.data[i] * mask.data[i];
  });
}

}  // namespace pmm::ag
