from pkg_resources import DistributionNotFound


try:
    _distribution = __import__('pkg_resources').get_distribution("aigc-adsac")
except DistributionNotFound:  # Likely, running from working dir without installed dist
    __version__ = 'SNAPSHOT'
else:
    __version__ = _distribution.version if _distribution else 'SNAPSHOT'


from aigc.adsac.guard import guard  # noqa: E402


__all__ = ("guard", "__version__")
