#pragma once

namespace spdnn::detail {

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};

}  // namespace spdnn::detail
