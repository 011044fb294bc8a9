import random

import pytest

from facegate.imageio import (GrayImage, NetpbmError, Rect, RgbImage, crop,
                              decode_netpbm, encode_netpbm, gray_to_rgb,
                              resize_nearest, to_grayscale)

from conftest import random_gray, random_rgb


class TestDecode:
    def test_pgm_payload_copied_verbatim(self):
        img = decode_netpbm(b"P5 2 2 255 "[:-1] + b"\n" + bytes([0, 64, 128, 255]))
        assert isinstance(img, GrayImage)
        assert (img.width, img.height) == (2, 2)
        assert list(img.data) == [0, 64, 128, 255]

    def test_ppm_single_red_pixel(self):
        img = decode_netpbm(b"P6 1 1 255\n" + bytes([255, 0, 0]))
        assert isinstance(img, RgbImage)
        assert img.at(0, 0) == (255, 0, 0)

    def test_header_comments_and_whitespace(self):
        canon = decode_netpbm(b"P5\n2 1\n255\n" + bytes([7, 9]))
        commented = decode_netpbm(
            b"P5 # magic\n# a comment line\n 2\t1 # dims\n255\n" + bytes([7, 9]))
        assert commented == canon

    def test_bad_magic_offset_zero(self):
        with pytest.raises(NetpbmError) as exc:
            decode_netpbm(b"P3 1 1 255\n abc")
        assert exc.value.offset == 0

    def test_non_numeric_dimension(self):
        with pytest.raises(NetpbmError, match="non-numeric width"):
            decode_netpbm(b"P5 x 1 255\n\x00")

    def test_wrong_maxval_reports_offset(self):
        data = b"P5 1 1 65535\n\x00\x00"
        with pytest.raises(NetpbmError, match="maxval") as exc:
            decode_netpbm(data)
        assert exc.value.offset == data.index(b"65535") + len(b"65535")

    def test_truncated_payload_offset_is_end_of_data(self):
        data = b"P5 2 2 255\n" + bytes([1, 2, 3])
        with pytest.raises(NetpbmError, match="truncated") as exc:
            decode_netpbm(data)
        assert exc.value.offset == len(data)

    def test_truncated_header(self):
        with pytest.raises(NetpbmError, match="header truncated"):
            decode_netpbm(b"P5 2 2")

    def test_zero_dimension_rejected(self):
        with pytest.raises(NetpbmError, match="dimensions"):
            decode_netpbm(b"P5 0 2 255\n")


class TestRoundTrip:
    def test_encode_decode_is_identity_on_bytes(self):
        rng = random.Random(1001)
        for _ in range(100):
            w, h = rng.randint(1, 12), rng.randint(1, 12)
            if rng.random() < 0.5:
                payload = bytes(rng.randrange(256) for _ in range(w * h))
                f = b"P5\n%d %d\n255\n" % (w, h) + payload
            else:
                payload = bytes(rng.randrange(256) for _ in range(w * h * 3))
                f = b"P6\n%d %d\n255\n" % (w, h) + payload
            assert encode_netpbm(decode_netpbm(f)) == f

    def test_decode_encode_is_identity_on_images(self):
        rng = random.Random(1002)
        for _ in range(50):
            img = random_rgb(rng, rng.randint(1, 9), rng.randint(1, 9))
            assert decode_netpbm(encode_netpbm(img)) == img


class TestGrayscale:
    @pytest.mark.parametrize("rgb,luma", [
        ((255, 255, 255), 255),
        ((0, 0, 0), 0),
        ((255, 0, 0), 76),  # round_half_up(0.299 * 255) = round(76.245)
        ((0, 255, 0), 150),
        ((0, 0, 255), 29),
    ])
    def test_known_luma_values(self, rgb, luma):
        img = RgbImage(1, 1, bytes(rgb))
        assert to_grayscale(img).data[0] == luma

    def test_gray_to_rgb_replicates_channels(self):
        assert gray_to_rgb(GrayImage(1, 1, bytes([42]))).at(0, 0) == (42, 42, 42)

    def test_gray_projection_idempotent_exhaustive(self):
        # luma of (v,v,v) must round back to v for every 8-bit value
        g = GrayImage(16, 16, bytes(range(256)))
        assert to_grayscale(gray_to_rgb(g)) == g

    def test_gray_projection_idempotent_random(self):
        rng = random.Random(1003)
        for _ in range(25):
            g = random_gray(rng, rng.randint(1, 16), rng.randint(1, 16))
            assert to_grayscale(gray_to_rgb(g)) == g

    def test_dimensions_preserved(self):
        rng = random.Random(1004)
        img = random_rgb(rng, 7, 3)
        gray = to_grayscale(img)
        assert (gray.width, gray.height) == (7, 3)


def naive_crop(img: RgbImage, r: Rect) -> RgbImage:
    out = bytearray()
    for y in range(r.y, r.y + r.h):
        for x in range(r.x, r.x + r.w):
            out.extend(img.at(x, y))
    return RgbImage(r.w, r.h, bytes(out))


class TestCrop:
    def test_full_image_rect_is_identity(self):
        rng = random.Random(1005)
        img = random_rgb(rng, 6, 4)
        assert crop(img, Rect(0, 0, 6, 4)) == img

    def test_single_pixel(self):
        rng = random.Random(1006)
        img = random_rgb(rng, 5, 5)
        assert crop(img, Rect(3, 2, 1, 1)).at(0, 0) == img.at(3, 2)

    def test_random_rects_match_naive_oracle(self):
        rng = random.Random(1007)
        for _ in range(100):
            img = random_rgb(rng, rng.randint(2, 20), rng.randint(2, 20))
            w = rng.randint(1, img.width)
            h = rng.randint(1, img.height)
            r = Rect(rng.randint(0, img.width - w), rng.randint(0, img.height - h),
                     w, h)
            assert crop(img, r) == naive_crop(img, r)

    def test_out_of_bounds_rejected(self):
        rng = random.Random(1008)
        img = random_rgb(rng, 4, 4)
        with pytest.raises(ValueError, match="outside image"):
            crop(img, Rect(2, 2, 3, 3))

    def test_never_reads_outside_rect(self):
        # plant a crop region inside a canary canvas; result must contain
        # no canary bytes
        inner = bytes([7] * (3 * 3 * 3))
        canvas = bytearray([255] * (9 * 9 * 3))
        for y in range(3):
            for x in range(3):
                i = ((y + 3) * 9 + (x + 3)) * 3
                canvas[i : i + 3] = inner[(y * 3 + x) * 3 :][:3]
        img = RgbImage(9, 9, bytes(canvas))
        out = crop(img, Rect(3, 3, 3, 3))
        assert set(out.data) == {7}


def naive_resize(img: RgbImage, w: int, h: int) -> RgbImage:
    out = bytearray()
    for j in range(h):
        for i in range(w):
            out.extend(img.at(i * img.width // w, j * img.height // h))
    return RgbImage(w, h, bytes(out))


class TestResize:
    def test_same_size_is_identity(self):
        rng = random.Random(1009)
        img = random_rgb(rng, 5, 7)
        assert resize_nearest(img, 5, 7) == img

    def test_2x2_to_4x4_replicates_blocks(self):
        img = RgbImage(2, 2, bytes([10, 0, 0, 20, 0, 0, 30, 0, 0, 40, 0, 0]))
        out = resize_nearest(img, 4, 4)
        assert out.at(0, 0) == out.at(1, 1) == (10, 0, 0)
        assert out.at(2, 0) == out.at(3, 1) == (20, 0, 0)
        assert out.at(0, 2) == out.at(1, 3) == (30, 0, 0)
        assert out.at(2, 2) == out.at(3, 3) == (40, 0, 0)

    def test_random_resizes_match_index_formula(self):
        rng = random.Random(1010)
        for _ in range(60):
            img = random_rgb(rng, rng.randint(1, 16), rng.randint(1, 16))
            w, h = rng.randint(1, 24), rng.randint(1, 24)
            assert resize_nearest(img, w, h) == naive_resize(img, w, h)

    def test_bad_target_rejected(self):
        rng = random.Random(1011)
        with pytest.raises(ValueError):
            resize_nearest(random_rgb(rng, 2, 2), 0, 4)

    def test_output_contains_only_source_pixels(self):
        # nearest-neighbor never synthesizes values, so any out-of-bounds
        # read would surface as a foreign byte triple
        rng = random.Random(1012)
        for _ in range(20):
            img = random_rgb(rng, rng.randint(1, 9), rng.randint(1, 9))
            source = {img.at(x, y) for y in range(img.height)
                      for x in range(img.width)}
            out = resize_nearest(img, rng.randint(1, 30), rng.randint(1, 30))
            produced = {out.at(x, y) for y in range(out.height)
                        for x in range(out.width)}
            assert produced <= source


class TestInvariants:
    def test_image_data_length_checked(self):
        with pytest.raises(ValueError):
            GrayImage(2, 2, bytes(3))
        with pytest.raises(ValueError):
            RgbImage(2, 2, bytes(11))

    def test_rect_validation(self):
        with pytest.raises(ValueError):
            Rect(-1, 0, 2, 2)
        with pytest.raises(ValueError):
            Rect(0, 0, 0, 2)
