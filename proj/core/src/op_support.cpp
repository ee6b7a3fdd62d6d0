#include "op_support.hpp"

#include <algorithm>
#include <bit>
#include <cstdint>
#include <type_traits>

namespace spinet::detail {

void require_same_dtype(const char* op, std::initializer_list<const Tensor*> tensors) {
  const Tensor* first = nullptr;
  for (const Tensor* t : tensors) {
    if (!t || !t->defined()) continue;
    if (!first) {
      first = t;
    } else if (t->dtype() != first->dtype()) {
      throw UsageError(std::string(op) + ": mixed dtypes " + to_string(first->dtype()) + " and " +
                       to_string(t->dtype()));
    }
  }
}

void require_rank(const char* op, const Tensor& t, std::size_t rank, const char* name) {
  if (t.rank() != rank) {
    throw ShapeError(std::string(op) + ": '" + name + "' must have rank " + std::to_string(rank) + ", got " +
                     to_string(t.shape()));
  }
}

void check_finite(const TensorImpl& out, const char* op) {
  // Tests exponent bits with a branch-free reduction, which vectorizes.
  const bool ok = std::visit(
      [](const auto& v) {
        using T = typename std::decay_t<decltype(v)>::value_type;
        using Bits = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
        constexpr Bits exponent = sizeof(T) == 4 ? Bits(0x7f800000u) : Bits(0x7ff0000000000000ull);
        Bits bad = 0;
        for (const T x : v) bad |= static_cast<Bits>((std::bit_cast<Bits>(x) & exponent) == exponent);
        return bad == 0;
      },
      out.data);
  if (!ok) throw NumericError(std::string(op) + ": non-finite value in output");
}

Tensor finish(ImplPtr out, const char* op, std::vector<ImplPtr> inputs,
              std::function<void(const Tape::Entry&)> backward) {
  check_finite(*out, op);
  Tape* tape = active_tape();
  const bool any_grad = std::any_of(inputs.begin(), inputs.end(), [](const ImplPtr& p) { return wants_grad(p); });
  if (tape && any_grad) {
    out->requires_grad = true;
    tape->record(Tape::Entry{std::move(inputs), out, std::move(backward)});
  }
  return Tensor(std::move(out));
}

}  // namespace spinet::detail
