import base64
import json
import string

import pytest
from hypothesis import given, strategies as st

from nftaudit.classify import (
    DEFAULT_CLOUD_KEYWORDS,
    Category,
    OnChainAsset,
    PermanenceClass,
    StorageCategory,
    b64decode_lenient,
    classify_uri,
    decode_onchain_image,
    decode_onchain_json,
    export_onchain_asset,
    load_keywords,
    map_permanence,
    split_uri,
)
from nftaudit.errors import BadPrefixError, EmptyUriError, InvalidBase64Error, UnparseablePayloadError

_ALPHABET = string.ascii_uppercase + string.ascii_lowercase + string.digits + "+/"


def reference_b64(data: bytes) -> str:
    """Bit-by-bit base64 encoder, independent of the base64 module."""
    bits = "".join(f"{b:08b}" for b in data)
    bits += "0" * (-len(bits) % 6)
    out = "".join(_ALPHABET[int(bits[i:i + 6], 2)] for i in range(0, len(bits), 6))
    return out + "=" * (-len(out) % 4)


# frozen with reference_b64; checked against it below
NAME_A_B64 = "eyJuYW1lIjoiQSJ9"
SVG_B64 = "PHN2Zy8+"


def test_frozen_oracle_values():
    assert reference_b64(b'{"name":"A"}') == NAME_A_B64
    assert reference_b64(b"<svg/>") == SVG_B64
    assert reference_b64(b"ab") == base64.b64encode(b"ab").decode()


@pytest.mark.parametrize("raw,scheme,host", [
    ("https://blockdataanalysis.com/v1/22", "https", "blockdataanalysis.com"),
    ("data:application/json;base64,AAAA", "data", ""),
    ("ipfs://ipfs/QmSS78vR7kforvUU9jk9JjSowc1GDtGDkg2mktAcWtPWT3/image.png", "ipfs", "ipfs"),
    ("HTTPS://Gateway.Pinata.Cloud/ipfs/Qm", "https", "gateway.pinata.cloud"),
    ("  https://a.com  ", "https", "a.com"),
    ("https://a.com:8443/x?y#z", "https", "a.com:8443"),
    ("https://a.com?x=1", "https", "a.com"),
    ("QmHash/1.json", "", "qmhash"),
    ("/relative/path", "", "relative"),
    ("//cdn.example.com/1", "", "cdn.example.com"),
    ("localhost:8080/meta/1", "", "localhost:8080"),
    ("ar:abcdef", "ar", ""),
])
def test_split_uri(raw, scheme, host):
    stem = split_uri(raw)
    assert (stem.scheme, stem.host_root) == (scheme, host)
    assert stem.raw == raw


@pytest.mark.parametrize("raw", ["", "   ", "\n"])
def test_split_uri_empty(raw):
    with pytest.raises(EmptyUriError):
        split_uri(raw)


STORAGE_EXAMPLES = [
    ("https://pellar-dev.s3-ap-southeast-1.amazonaws.com/nft/1652610435.json",
     StorageCategory(Category.CLOUD_PROVIDER, "s3")),
    ("https://www.pullmyrug.com/api/metadata/0/", StorageCategory(Category.PRIVATE_DOMAIN)),
    ("https://ipfs.io/ipfs/QmeW27ViBBpJWo9mDqg9Bpq9KlLbHiFGAE9Qrzs7TyGMwvi", StorageCategory(Category.IPFS)),
    ("https://gateway.pinata.cloud/ipfs/QmbuE31SxEDjfVrK26pH1ktdhMkf42WLXcMTrVWwGzSVcK/748",
     StorageCategory(Category.PINATA)),
    ("data:application/json;base64,eyJuYW1lIjoiQSJ9", StorageCategory(Category.ONCHAIN_BASE64)),
]


@pytest.mark.parametrize("uri,expected", STORAGE_EXAMPLES)
def test_classify_storage_examples(uri, expected):
    assert classify_uri(split_uri(uri)) == expected


@pytest.mark.parametrize("uri,expected", [
    ("ipfs://ipfs/QmSS78/image.png", Category.IPFS),
    ("ipfs://QmSS78/1.json", Category.IPFS),
    ("https://cloudflare-ipfs.com/ipfs/Qm", Category.IPFS),
    ("pinata://x", Category.PINATA),
    ("https://mynft.mypinata.cloud/ipfs/Qm", Category.PINATA),
    # ipfs only in the path does not count
    ("https://example.com/ipfs/Qm", Category.PRIVATE_DOMAIN),
    ("https://app.herokuapp.com/api/1", Category.CLOUD_PROVIDER),
    ("https://storage.googleapis.com/b/1.json", Category.CLOUD_PROVIDER),
    ("data:image/svg+xml;base64,PHN2Zy8+", Category.ONCHAIN_BASE64),
    ("data:application/json;charset=utf-8;base64,e30=", Category.ONCHAIN_BASE64),
    ("data:application/json;utf8,{}", Category.PRIVATE_DOMAIN),
])
def test_classify_rules(uri, expected):
    assert classify_uri(split_uri(uri)).category is expected


def test_non_base64_data_uri_is_flagged():
    category = classify_uri(split_uri("data:application/json,{}"))
    assert category.category is Category.PRIVATE_DOMAIN
    assert category.anomaly == "non_base64_data_uri"


def test_cloud_keyword_choice():
    # leftmost keyword in the host wins; list order breaks ties at the same position
    assert classify_uri(split_uri("https://x.s3.amazonaws.com/1")).keyword == "s3"
    assert classify_uri(split_uri("https://amazonaws-s3.com/1")).keyword == "aws"
    assert classify_uri(split_uri("https://oracle.com/x"), ["oracle", "ora"]).keyword == "oracle"
    assert classify_uri(split_uri("https://oracle.com/x"), ["ora", "oracle"]).keyword == "ora"


def test_custom_keyword_list(tmp_path):
    path = tmp_path / "kw.txt"
    path.write_text("# tightened list\nAmazonAWS\n\nheroku  # apps\n")
    keywords = load_keywords(path)
    assert keywords == ("amazonaws", "heroku")
    assert classify_uri(split_uri("https://x.s3.amazonaws.com/1"), keywords).keyword == "amazonaws"
    assert classify_uri(split_uri("https://s3bucket.example.com/1"), keywords).category is Category.PRIVATE_DOMAIN


def test_default_keywords_match_bundled_file():
    assert load_keywords() == DEFAULT_CLOUD_KEYWORDS
    assert len(DEFAULT_CLOUD_KEYWORDS) == 12


@pytest.mark.parametrize("category,expected", [
    (Category.IPFS, PermanenceClass.PERMANENT),
    (Category.PINATA, PermanenceClass.PERMANENT),
    (Category.ONCHAIN_BASE64, PermanenceClass.PERMANENT),
    (Category.CLOUD_PROVIDER, PermanenceClass.NON_PERMANENT),
    (Category.PRIVATE_DOMAIN, PermanenceClass.NON_PERMANENT),
    (Category.UNREADABLE, PermanenceClass.NOT_READABLE),
])
def test_map_permanence(category, expected):
    assert map_permanence(StorageCategory(category)) is expected
    assert map_permanence(category) is expected


def test_permanence_is_a_partition():
    classes = {map_permanence(c) for c in Category}
    assert classes == set(PermanenceClass)


def test_storage_category_text_roundtrip():
    for category in [StorageCategory(Category.CLOUD_PROVIDER, "s3"), StorageCategory(Category.IPFS)]:
        assert StorageCategory.parse(str(category)) == category
    assert str(StorageCategory(Category.CLOUD_PROVIDER, "s3")) == "cloud_provider(s3)"


def test_decode_onchain_json():
    asset = decode_onchain_json("data:application/json;base64," + NAME_A_B64)
    assert asset.metadata == {"name": "A"}
    assert asset.image_payload is None
    assert decode_onchain_json("DATA:Application/JSON;BASE64," + NAME_A_B64).metadata == {"name": "A"}


@pytest.mark.parametrize("uri,error", [
    ("data:application/json;base64,!!!", InvalidBase64Error),
    ("data:application/json;base64,A", InvalidBase64Error),
    ("https://a.com/1.json", BadPrefixError),
    ("data:application/json,{}", BadPrefixError),
    ("data:text/plain;base64," + NAME_A_B64, BadPrefixError),
    ("data:application/json;base64," + reference_b64(b"not json"), UnparseablePayloadError),
])
def test_decode_onchain_json_errors(uri, error):
    with pytest.raises(error) as err:
        decode_onchain_json(uri)
    if error is not BadPrefixError:
        assert err.value.payload == uri.split(",", 1)[1]


def test_decode_onchain_image():
    metadata = {"name": "x", "image": "data:image/svg+xml;base64," + SVG_B64}
    asset = decode_onchain_image(OnChainAsset(metadata))
    assert asset.image_payload == b"<svg/>"
    assert asset.image_media_type == "image/svg+xml"


@pytest.mark.parametrize("metadata", [
    {"image": "ipfs://QmSS78/image.png"},
    {"name": "no image"},
    {"image": "data:image/png;base64,AAAA"},
    ["not", "an", "object"],
])
def test_decode_onchain_image_absent(metadata):
    asset = decode_onchain_image(OnChainAsset(metadata))
    assert asset.image_payload is None and asset.image_media_type is None


def test_decode_onchain_image_bad_second_layer():
    with pytest.raises(InvalidBase64Error):
        decode_onchain_image(OnChainAsset({"image": "data:image/svg+xml;base64,@@@"}))


def test_lenient_base64_variants():
    data = bytes(range(256))
    standard = base64.b64encode(data).decode()
    assert b64decode_lenient(standard) == data
    assert b64decode_lenient(standard.rstrip("=")) == data
    assert b64decode_lenient(base64.urlsafe_b64encode(data).decode().rstrip("=")) == data
    assert b64decode_lenient(standard[:40] + "\n" + standard[40:]) == data


def test_export_onchain_asset(tmp_path):
    asset = OnChainAsset({"name": "A"}, b"<svg/>", "image/svg+xml")
    written = export_onchain_asset(asset, "0xabc", 7, tmp_path)
    assert [p.name for p in written] == ["0xabc_7.json", "0xabc_7.svg"]
    assert json.loads(written[0].read_text()) == {"name": "A"}
    assert written[1].read_bytes() == b"<svg/>"


hosts = st.from_regex(r"[a-z0-9][a-z0-9.\-]{0,30}", fullmatch=True)
schemes = st.sampled_from(["http", "https", "ipfs", "ar", "data", "pinata"])
paths = st.from_regex(r"(/[A-Za-z0-9._\-]{0,12}){0,3}", fullmatch=True)


@given(schemes, hosts, paths)
def test_classification_is_total_and_case_insensitive(scheme, host, path):
    uri = f"{scheme}://{host}{path}"
    stem = split_uri(uri)
    category = classify_uri(stem)
    assert category.category in set(Category) - {Category.UNREADABLE}
    if category.category is Category.CLOUD_PROVIDER:
        assert category.keyword in DEFAULT_CLOUD_KEYWORDS
    assert f"{stem.scheme}://{stem.host_root}" == uri.lower()[: len(stem.scheme) + 3 + len(stem.host_root)]
    shouted = f"{scheme.upper()}://{host.upper()}{path}"
    assert classify_uri(split_uri(shouted)) == category


@given(st.recursive(
    st.none() | st.booleans() | st.integers() | st.text(),
    lambda children: st.lists(children) | st.dictionaries(st.text(), children),
    max_leaves=20,
))
def test_json_roundtrip(document):
    encoded = base64.b64encode(json.dumps(document).encode()).decode()
    assert decode_onchain_json("data:application/json;base64," + encoded).metadata == document


@given(st.binary(max_size=512), st.booleans(), st.booleans())
def test_image_roundtrip(payload, urlsafe, strip):
    encoder = base64.urlsafe_b64encode if urlsafe else base64.b64encode
    text = encoder(payload).decode()
    if strip:
        text = text.rstrip("=")
    asset = decode_onchain_image(OnChainAsset({"image": "data:image/svg+xml;base64," + text}))
    assert asset.image_payload == payload
