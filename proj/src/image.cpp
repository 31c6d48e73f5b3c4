#include "dvs/image.hpp"

namespace dvs {

Image Image::filled(int width, int height, const Rgb& c) {
  Image img(width, height);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) img.set(x, y, c);
  return img;
}

double luminance(const Rgb& c) { return 0.299 * c.x() + 0.587 * c.y() + 0.114 * c.z(); }

}  // namespace dvs
