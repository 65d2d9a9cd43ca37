"""
DriveTraits 驾驶特质估计流水线
"""
